//! Correlation alignment.
//!
//! Covariance of an n×d feature matrix D:
//! `C = (DᵀD − (1ᵀD)ᵀ(1ᵀD)/n) / (n − 1)`.
//! Distance between two covariances: `‖C_S − C_T‖²_F / (4d²)`.
//! Joint loss over the three training clusters:
//! `L = ce + A / (A + B + ε)` with `A = coral(real-neg, synt-neg)` and
//! `B = coral(real-pos, real-neg)`.

use crate::corpus::Cluster;
use crate::error::{KwsError, Result};
use crate::nn::Tensor;

pub const DEFAULT_EPS: f64 = 1e-8;

/// Rows of one cluster's embedding features.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCluster {
    pub features: Tensor,
    pub tag: Cluster,
}

impl EmbeddingCluster {
    pub fn new(features: Tensor, tag: Cluster) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if n < 2 {
            return Err(KwsError::invalid(format!(
                "cluster {tag} has {n} samples, covariance needs at least 2"
            )));
        }
        if !features.is_finite() {
            return Err(KwsError::NonFinite(format!("features of cluster {tag}")));
        }
        Ok(Self { features, tag })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.features.dims2().expect("rank checked at construction")
    }
}

/// Symmetric d×d matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    d: usize,
    values: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn from_values(d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d * d {
            return Err(KwsError::shape(format!("{} values for a {d}x{d} matrix", values.len())));
        }
        Ok(Self { d, values })
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            values: vec![0.0; d * d],
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }
}

/// Covariance by the Gram-minus-outer-product formula.
pub fn covariance(cluster: &EmbeddingCluster) -> CovarianceMatrix {
    let (n, d) = cluster.dims();
    let x = cluster.features.data();
    let mut col_sum = vec![0.0; d];
    let mut gram = vec![0.0; d * d];
    for row in x.chunks_exact(d) {
        for i in 0..d {
            col_sum[i] += row[i];
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                gram[i * d + j] += ri * row[j];
            }
        }
    }
    let nf = n as f64;
    let mut values = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let c = (gram[i * d + j] - col_sum[i] * col_sum[j] / nf) / (nf - 1.0);
            values[i * d + j] = c;
            values[j * d + i] = c;
        }
    }
    CovarianceMatrix { d, values }
}

pub fn coral_loss(source: &CovarianceMatrix, target: &CovarianceMatrix) -> Result<f64> {
    if source.d != target.d {
        return Err(KwsError::shape(format!(
            "covariance dimensions differ: {} vs {}",
            source.d, target.d
        )));
    }
    let d = source.d as f64;
    let sq: f64 = source
        .values
        .iter()
        .zip(&target.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(sq / (4.0 * d * d))
}

/// CORAL distance between two clusters with gradients on both feature sets.
#[derive(Debug, Clone)]
pub struct CoralTerm {
    pub loss: f64,
    pub grad_source: Tensor,
    pub grad_target: Tensor,
}

/// dL/dD_S = D̄_S (C_S − C_T) / (d² (n_S − 1)), with D̄ the column-centered
/// features; the target side has the opposite sign.
pub fn coral_with_grad(source: &EmbeddingCluster, target: &EmbeddingCluster) -> Result<CoralTerm> {
    let cs = covariance(source);
    let ct = covariance(target);
    let loss = coral_loss(&cs, &ct)?;
    let d = cs.d;
    let diff: Vec<f64> = cs.values.iter().zip(&ct.values).map(|(a, b)| a - b).collect();
    let side = |c: &EmbeddingCluster, sign: f64| -> Result<Tensor> {
        let (n, _) = c.dims();
        let x = c.features.data();
        let mut mean = vec![0.0; d];
        for row in x.chunks_exact(d) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let scale = sign / ((d * d) as f64 * (n as f64 - 1.0));
        let mut g = vec![0.0; n * d];
        let mut centered = vec![0.0; d];
        for (row, grow) in x.chunks_exact(d).zip(g.chunks_exact_mut(d)) {
            centered.iter_mut().zip(row.iter().zip(&mean)).for_each(|(c, (v, m))| *c = v - m);
            for (j, gj) in grow.iter_mut().enumerate() {
                let mut s = 0.0;
                for k in 0..d {
                    s += centered[k] * diff[k * d + j];
                }
                *gj = scale * s;
            }
        }
        Tensor::from_vec(&[n, d], g)
    };
    Ok(CoralTerm {
        loss,
        grad_source: side(source, 1.0)?,
        grad_target: side(target, -1.0)?,
    })
}

/// Value and feature gradients of `ce + A / (A + B + ε)`.
#[derive(Debug, Clone)]
pub struct JointLoss {
    pub total: f64,
    /// A / (A + B + ε), always in [0, 1].
    pub ratio: f64,
    /// coral(real-neg, synt-neg)
    pub a: f64,
    /// coral(real-pos, real-neg)
    pub b: f64,
    pub grad_real_pos: Tensor,
    pub grad_real_neg: Tensor,
    pub grad_synt_neg: Tensor,
}

/// A / (A + B + ε), zero when the denominator vanishes.
pub fn ratio_term(a: f64, b: f64, eps: f64) -> f64 {
    let denom = a + b + eps;
    if denom > 0.0 {
        a / denom
    } else {
        0.0
    }
}

pub fn joint_loss(
    ce: f64,
    real_pos: &EmbeddingCluster,
    real_neg: &EmbeddingCluster,
    synt_neg: &EmbeddingCluster,
    eps: f64,
) -> Result<JointLoss> {
    let dims = [real_pos.dims().1, real_neg.dims().1, synt_neg.dims().1];
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(KwsError::shape(format!("cluster feature widths differ: {dims:?}")));
    }
    if eps < 0.0 {
        return Err(KwsError::invalid("eps must be nonnegative"));
    }
    let a = coral_with_grad(real_neg, synt_neg)?;
    let b = coral_with_grad(real_pos, real_neg)?;
    let denom = a.loss + b.loss + eps;
    let ratio = ratio_term(a.loss, b.loss, eps);
    let (da, db) = if denom > 0.0 {
        (
            (b.loss + eps) / (denom * denom),
            -a.loss / (denom * denom),
        )
    } else {
        (0.0, 0.0)
    };
    let scaled = |t: &Tensor, s: f64| {
        Tensor::from_vec(t.shape(), t.data().iter().map(|v| v * s).collect()).expect("same shape")
    };
    let mut grad_real_neg = scaled(&a.grad_source, da);
    grad_real_neg
        .data_mut()
        .iter_mut()
        .zip(b.grad_target.data())
        .for_each(|(g, v)| *g += db * v);
    Ok(JointLoss {
        total: ce + ratio,
        ratio,
        a: a.loss,
        b: b.loss,
        grad_real_pos: scaled(&b.grad_source, db),
        grad_real_neg,
        grad_synt_neg: scaled(&a.grad_target, da),
    })
}
