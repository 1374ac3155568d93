//! Layer kernels: 3×3 same-padded convolution, 2×2 max pooling, ReLU,
//! dense layers and softmax cross-entropy.
//!
//! Every kernel processes samples independently, so a sample's result does
//! not depend on which batch it was computed in.

use super::Tensor;
use crate::error::{KwsError, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// C (m×n) = alpha·A·B + beta·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted index bounds cover every element the kernel reads
    // or writes; `c` is a distinct, exclusively borrowed buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds one sample (c×h×w) into a (c·9)×(h·w) patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the sample.
fn col2im(col: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[(ci * TAPS + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
}

fn check_conv(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, cin, h, w) = input.dims4()?;
    let (cout, wcin, kh, kw) = weight.dims4()?;
    if wcin != cin || kh != KERNEL || kw != KERNEL {
        return Err(KwsError::shape(format!(
            "conv weight {:?} does not fit input {:?}",
            weight.shape(),
            input.shape()
        )));
    }
    if bias.shape() != [cout] {
        return Err(KwsError::shape(format!("conv bias {:?}, expected [{cout}]", bias.shape())));
    }
    if h == 0 || w == 0 {
        return Err(KwsError::shape("conv input has an empty spatial dimension"));
    }
    Ok((n, cin, h, w, cout))
}

/// 3×3 cross-correlation, stride 1, zero padding 1, plus bias.
pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, cin, h, w, cout) = check_conv(input, weight, bias)?;
    let hw = h * w;
    let k = cin * TAPS;
    let mut out = Tensor::zeros(&[n, cout, h, w]);
    let mut col = vec![0.0; k * hw];
    for s in 0..n {
        im2col(&input.data()[s * cin * hw..(s + 1) * cin * hw], cin, h, w, &mut col);
        let o = &mut out.data_mut()[s * cout * hw..(s + 1) * cout * hw];
        for (co, plane) in o.chunks_exact_mut(hw).enumerate() {
            plane.fill(bias.data()[co]);
        }
        gemm(cout, k, hw, weight.data(), (k, 1), &col, (hw, 1), 1.0, o);
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `dout`.
/// The input gradient is skipped when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dout: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let (n, cin, h, w, cout) = check_conv(input, weight, bias)?;
    if dout.shape() != [n, cout, h, w] {
        return Err(KwsError::shape(format!(
            "conv upstream gradient {:?}, expected {:?}",
            dout.shape(),
            [n, cout, h, w]
        )));
    }
    let hw = h * w;
    let k = cin * TAPS;
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[cout]);
    let mut dx = need_input.then(|| Tensor::zeros(input.shape()));
    let mut col = vec![0.0; k * hw];
    let mut dcol = vec![0.0; k * hw];
    for s in 0..n {
        let g = &dout.data()[s * cout * hw..(s + 1) * cout * hw];
        for (co, plane) in g.chunks_exact(hw).enumerate() {
            db.data_mut()[co] += plane.iter().sum::<f64>();
        }
        im2col(&input.data()[s * cin * hw..(s + 1) * cin * hw], cin, h, w, &mut col);
        // dW (cout×k) += G (cout×hw) · colᵀ (hw×k)
        gemm(cout, hw, k, g, (hw, 1), &col, (1, hw), 1.0, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            // dcol (k×hw) = Wᵀ (k×cout) · G (cout×hw)
            gemm(k, cout, hw, weight.data(), (1, k), g, (hw, 1), 0.0, &mut dcol);
            col2im(&dcol, cin, h, w, &mut dx.data_mut()[s * cin * hw..(s + 1) * cin * hw]);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// 2×2 max pooling with floor semantics. Returns the pooled tensor and, per
/// output element, the flat input index of the window maximum (first
/// maximum in row-major order on ties).
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let x = input.data();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.data_mut()[o] = x[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each upstream element to its cached argmax position.
pub fn maxpool2x2_backward(dout: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if dout.len() != argmax.len() {
        return Err(KwsError::shape(format!(
            "pool gradient has {} elements, {} argmax entries cached",
            dout.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &i) in dout.data().iter().zip(argmax) {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

pub fn relu_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace(grad: &mut Tensor, output: &Tensor) {
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// y = x·Wᵀ + b for x (n×in), W (out×in).
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, din) = x.dims2()?;
    let (dout, win) = weight.dims2()?;
    if win != din || bias.shape() != [dout] {
        return Err(KwsError::shape(format!(
            "dense weight {:?} / bias {:?} do not fit input {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let mut y = Tensor::zeros(&[n, dout]);
    for (xr, yr) in x.data().chunks_exact(din).zip(y.data_mut().chunks_exact_mut(dout)) {
        for ((yo, wr), b) in yr.iter_mut().zip(weight.data().chunks_exact(din)).zip(bias.data()) {
            *yo = b + wr.iter().zip(xr).map(|(w, x)| w * x).sum::<f64>();
        }
    }
    Ok(y)
}

pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(x: &Tensor, weight: &Tensor, dy: &Tensor) -> Result<DenseGrads> {
    let (n, din) = x.dims2()?;
    let (dout, _) = weight.dims2()?;
    if dy.shape() != [n, dout] {
        return Err(KwsError::shape(format!(
            "dense upstream gradient {:?}, expected [{n}, {dout}]",
            dy.shape()
        )));
    }
    let mut dx = Tensor::zeros(&[n, din]);
    let mut dw = Tensor::zeros(&[dout, din]);
    let mut db = Tensor::zeros(&[dout]);
    for s in 0..n {
        let xr = &x.data()[s * din..(s + 1) * din];
        let gr = &dy.data()[s * dout..(s + 1) * dout];
        let dxr = &mut dx.data_mut()[s * din..(s + 1) * din];
        for (o, &g) in gr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            db.data_mut()[o] += g;
            let wr = &weight.data()[o * din..(o + 1) * din];
            let dwr = &mut dw.data_mut()[o * din..(o + 1) * din];
            for i in 0..din {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    Ok(DenseGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut p = logits.clone();
    for row in p.data_mut().chunks_exact_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(p)
}

/// Mean cross-entropy over the batch and its gradient on the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n || labels.iter().any(|&l| l >= k) {
        return Err(KwsError::shape(format!("{} labels for {n}×{k} logits", labels.len())));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for ((row, lrow), &y) in grad
        .data_mut()
        .chunks_exact_mut(k)
        .zip(logits.data().chunks_exact(k))
        .zip(labels)
    {
        let m = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lrow.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - lrow[y];
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t4(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t4([2, 1, 5, 4], |i| (i as f64).sin());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_constant() {
        let c = 1.5;
        let x = t4([1, 1, 5, 6], |_| c);
        let k = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        let at = |r: usize, col: usize| y.data()[r * 6 + col];
        assert_eq!(at(2, 2), 9.0 * c);
        assert_eq!(at(0, 0), 4.0 * c);
        assert_eq!(at(4, 5), 4.0 * c);
        assert_eq!(at(0, 2), 6.0 * c);
    }

    #[test]
    fn conv_output_keeps_spatial_size() {
        let x = Tensor::zeros(&[1, 1, 121, 80]);
        let w = Tensor::zeros(&[32, 1, 3, 3]);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[32])).unwrap();
        assert_eq!(y.shape(), &[1, 32, 121, 80]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[4, 2, 3, 3]), &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn pooling_basics() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx, vec![3]);

        let big = Tensor::zeros(&[1, 1, 121, 80]);
        let (p1, _) = maxpool2x2_forward(&big).unwrap();
        let (p2, _) = maxpool2x2_forward(&p1).unwrap();
        let (p3, _) = maxpool2x2_forward(&p2).unwrap();
        assert_eq!(p1.shape(), &[1, 1, 60, 40]);
        assert_eq!(p2.shape(), &[1, 1, 30, 20]);
        assert_eq!(p3.shape(), &[1, 1, 15, 10]);

        let c = t4([1, 2, 4, 6], |_| 0.7);
        let (y, idx) = maxpool2x2_forward(&c).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
        // ties resolve to the window's top-left element
        assert_eq!(idx[0], 0);
        assert_eq!(idx[1], 2);
    }

    #[test]
    fn pool_backward_routes_to_argmax() {
        let x = t4([2, 3, 7, 5], |i| ((i * 37) % 11) as f64);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        let g = Tensor::from_vec(y.shape(), (0..y.len()).map(|i| i as f64 + 0.5).collect()).unwrap();
        let dx = maxpool2x2_backward(&g, &idx, x.shape()).unwrap();
        assert_eq!(dx.data().iter().sum::<f64>(), g.data().iter().sum::<f64>());
        let nonzero = dx.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, g.len());
        for (k, &i) in idx.iter().enumerate() {
            assert_eq!(dx.data()[i], g.data()[k]);
        }
    }

    #[test]
    fn softmax_properties() {
        let l = Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 3.0, -1.0]).unwrap();
        let p = softmax(&l).unwrap();
        assert_eq!(&p.data()[..2], &[0.5, 0.5]);
        let shifted = Tensor::from_vec(&[2, 2], vec![7.0, 7.0, 10.0, 6.0]).unwrap();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let l = Tensor::from_vec(&[2, 2], vec![0.3, -0.2, 1.0, 2.0]).unwrap();
        let (loss, g) = softmax_cross_entropy(&l, &[0, 1]).unwrap();
        let p = softmax(&l).unwrap();
        let want = -(p.data()[0].ln() + p.data()[3].ln()) / 2.0;
        assert!((loss - want).abs() < 1e-12);
        assert!((g.data()[0] - (p.data()[0] - 1.0) / 2.0).abs() < 1e-15);
        assert!((g.data()[1] - p.data()[1] / 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn conv_is_linear_in_input(
            seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0,
            h in 1usize..7, w in 1usize..7,
        ) {
            let f = |s: u64, i: usize| (((i as u64 + 1) * (s + 7) * 2654435761) % 1000) as f64 / 500.0 - 1.0;
            let x = t4([1, 2, h, w], |i| f(seed, i));
            let y = t4([1, 2, h, w], |i| f(seed + 1, i));
            let k = t4([3, 2, 3, 3], |i| f(seed + 2, i));
            let zero = Tensor::zeros(&[3]);
            let mix = Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = conv2d_forward(&mix, &k, &zero).unwrap();
            let fx = conv2d_forward(&x, &k, &zero).unwrap();
            let fy = conv2d_forward(&y, &k, &zero).unwrap();
            for i in 0..lhs.len() {
                prop_assert!((lhs.data()[i] - (a * fx.data()[i] + b * fy.data()[i])).abs() < 1e-10);
            }
        }
    }
}
