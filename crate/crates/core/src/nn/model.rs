use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2_backward,
    maxpool2x2_forward, relu_backward_inplace, relu_inplace, softmax, KERNEL,
};
use super::Tensor;
use crate::error::{KwsError, Result};
use crate::frontend::{N_MELS, SEGMENT_FRAMES};

pub const N_CLASSES: usize = 2;
/// Output column holding the keyword posterior.
pub const KEYWORD_CLASS: usize = 1;
const N_CONV: usize = 3;

/// Where the embedding used by the CORAL term is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingTap {
    /// Output of the first dense layer after its ReLU (the input of fc2).
    Fc1,
    /// Flattened output of the last pooling layer (the input of fc1).
    Flatten,
}

impl EmbeddingTap {
    pub fn code(self) -> u32 {
        match self {
            EmbeddingTap::Fc1 => 0,
            EmbeddingTap::Flatten => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(EmbeddingTap::Fc1),
            1 => Ok(EmbeddingTap::Flatten),
            c => Err(KwsError::format(format!("unknown embedding tap code {c}"))),
        }
    }
}

impl std::str::FromStr for EmbeddingTap {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc1" => Ok(EmbeddingTap::Fc1),
            "flatten" => Ok(EmbeddingTap::Flatten),
            _ => Err(KwsError::invalid(format!("unknown embedding tap '{s}' (fc1 or flatten)"))),
        }
    }
}

impl std::fmt::Display for EmbeddingTap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingTap::Fc1 => "fc1",
            EmbeddingTap::Flatten => "flatten",
        })
    }
}

/// Self-describing architecture; stored in every checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub in_height: usize,
    pub in_width: usize,
    pub channels: [usize; N_CONV],
    pub d_emb: usize,
    pub tap: EmbeddingTap,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_height: SEGMENT_FRAMES,
            in_width: N_MELS,
            channels: [32, 32, 64],
            d_emb: 128,
            tap: EmbeddingTap::Fc1,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.in_height < 8 || self.in_width < 8 {
            return Err(KwsError::invalid(format!(
                "input {}x{} too small for three 2x2 pools",
                self.in_height, self.in_width
            )));
        }
        if self.channels.contains(&0) || self.d_emb == 0 {
            return Err(KwsError::invalid("channel counts and d_emb must be positive"));
        }
        Ok(())
    }

    /// Spatial size after each pooling stage.
    pub fn pooled_dims(&self) -> [(usize, usize); N_CONV] {
        let mut hw = (self.in_height, self.in_width);
        std::array::from_fn(|_| {
            hw = (hw.0 / 2, hw.1 / 2);
            hw
        })
    }

    pub fn flatten_dim(&self) -> usize {
        let (h, w) = self.pooled_dims()[N_CONV - 1];
        self.channels[N_CONV - 1] * h * w
    }

    pub fn embedding_dim(&self) -> usize {
        match self.tap {
            EmbeddingTap::Fc1 => self.d_emb,
            EmbeddingTap::Flatten => self.flatten_dim(),
        }
    }

    /// Expected shape of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut cin = 1;
        for &c in &self.channels {
            shapes.push(vec![c, cin, KERNEL, KERNEL]);
            shapes.push(vec![c]);
            cin = c;
        }
        shapes.push(vec![self.d_emb, self.flatten_dim()]);
        shapes.push(vec![self.d_emb]);
        shapes.push(vec![N_CLASSES, self.d_emb]);
        shapes.push(vec![N_CLASSES]);
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub conv: [ConvParams; N_CONV],
    pub fc1: DenseParams,
    pub fc2: DenseParams,
}

/// Gradients share the parameter layout.
pub type ParamGradients = ModelParams;

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let tensors = arch.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Self::from_tensors(arch, tensors)
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut cin = 1;
        for (layer, &c) in p.conv.iter_mut().zip(&arch.channels) {
            fill_normal(&mut layer.weight, (2.0 / (cin * KERNEL * KERNEL) as f64).sqrt(), rng);
            cin = c;
        }
        fill_normal(&mut p.fc1.weight, (2.0 / arch.flatten_dim() as f64).sqrt(), rng);
        fill_normal(&mut p.fc2.weight, (1.0 / arch.d_emb as f64).sqrt(), rng);
        Ok(p)
    }

    /// Training start point: [`ModelParams::init`] with the output layer
    /// zeroed, so initial posteriors are 0.5 whatever the input scale.
    pub fn init_zero_head<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(arch, rng)?;
        p.fc2.weight.data_mut().fill(0.0);
        Ok(p)
    }

    /// Builds parameters from tensors in [`Architecture::param_shapes`] order.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        if tensors.len() != shapes.len() {
            return Err(KwsError::shape(format!(
                "{} parameter tensors, architecture needs {}",
                tensors.len(),
                shapes.len()
            )));
        }
        for (i, (t, s)) in tensors.iter().zip(&shapes).enumerate() {
            if t.shape() != s.as_slice() {
                return Err(KwsError::shape(format!(
                    "parameter {i} has shape {:?}, architecture needs {s:?}",
                    t.shape()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked");
        let conv = std::array::from_fn(|_| ConvParams {
            weight: next(),
            bias: next(),
        });
        let fc1 = DenseParams {
            weight: next(),
            bias: next(),
        };
        let fc2 = DenseParams {
            weight: next(),
            bias: next(),
        };
        Ok(Self {
            arch,
            conv,
            fc1,
            fc2,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(10);
        for c in &self.conv {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        v.extend([&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(10);
        for c in &mut self.conv {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        v.extend([
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch).expect("architecture already validated")
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
    }

    /// self += alpha * other
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) -> Result<()> {
        if !self.same_layout(other) {
            return Err(KwsError::shape("parameter sets have different architectures"));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

fn fill_normal<R: Rng + ?Sized>(t: &mut Tensor, std: f64, rng: &mut R) {
    let d = Normal::new(0.0, std).expect("positive std");
    for v in t.data_mut() {
        *v = d.sample(rng);
    }
}

/// Activations cached by [`forward`] for an exact backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    arch: Architecture,
    /// Input of each conv layer.
    conv_in: Vec<Tensor>,
    /// Post-ReLU output of each conv layer.
    conv_out: Vec<Tensor>,
    pool_argmax: Vec<Vec<usize>>,
    /// Flattened last pooling output, batch × flatten_dim.
    flat: Tensor,
    /// Post-ReLU fc1 output, batch × d_emb.
    hidden: Tensor,
    pub logits: Tensor,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.logits.shape()[0]
    }

    /// The feature matrix at the configured tap (rows = samples).
    pub fn embedding(&self) -> &Tensor {
        match self.arch.tap {
            EmbeddingTap::Fc1 => &self.hidden,
            EmbeddingTap::Flatten => &self.flat,
        }
    }
}

/// Runs the network and returns logits plus the trace.
pub fn forward_logits(params: &ModelParams, batch: &Tensor) -> Result<ForwardTrace> {
    let arch = params.arch;
    let (n, c, h, w) = batch.dims4()?;
    if c != 1 || h != arch.in_height || w != arch.in_width {
        return Err(KwsError::shape(format!(
            "batch {:?} does not match model input 1x{}x{}",
            batch.shape(),
            arch.in_height,
            arch.in_width
        )));
    }
    let mut conv_in = Vec::with_capacity(N_CONV);
    let mut conv_out = Vec::with_capacity(N_CONV);
    let mut pool_argmax = Vec::with_capacity(N_CONV);
    let mut x = batch.clone();
    for layer in &params.conv {
        let mut y = conv2d_forward(&x, &layer.weight, &layer.bias)?;
        relu_inplace(&mut y);
        let (pooled, idx) = maxpool2x2_forward(&y)?;
        conv_in.push(x);
        conv_out.push(y);
        pool_argmax.push(idx);
        x = pooled;
    }
    let flat = x.reshaped(&[n, arch.flatten_dim()])?;
    let mut hidden = dense_forward(&flat, &params.fc1.weight, &params.fc1.bias)?;
    relu_inplace(&mut hidden);
    let logits = dense_forward(&hidden, &params.fc2.weight, &params.fc2.bias)?;
    debug_assert!(logits.is_finite(), "non-finite logits");
    Ok(ForwardTrace {
        arch,
        conv_in,
        conv_out,
        pool_argmax,
        flat,
        hidden,
        logits,
    })
}

/// Class probabilities (batch × 2) and the trace.
pub fn forward(params: &ModelParams, batch: &Tensor) -> Result<(Tensor, ForwardTrace)> {
    let trace = forward_logits(params, batch)?;
    let probs = softmax(&trace.logits)?;
    Ok((probs, trace))
}

/// Exact gradients of a scalar loss given its gradient on the logits and,
/// optionally, an extra gradient on the embedding (the CORAL term).
pub fn backward(
    trace: &ForwardTrace,
    params: &ModelParams,
    dlogits: &Tensor,
    embedding_grad: Option<&Tensor>,
) -> Result<ParamGradients> {
    if trace.arch != params.arch {
        return Err(KwsError::shape("trace was produced by a different architecture"));
    }
    let n = trace.batch_size();
    if dlogits.shape() != [n, N_CLASSES] {
        return Err(KwsError::shape(format!(
            "logit gradient {:?}, trace batch is {n}",
            dlogits.shape()
        )));
    }
    if let Some(g) = embedding_grad {
        if g.shape() != trace.embedding().shape() {
            return Err(KwsError::shape(format!(
                "embedding gradient {:?}, embedding is {:?}",
                g.shape(),
                trace.embedding().shape()
            )));
        }
    }
    let mut grads = params.zeros_like();

    let fc2 = dense_backward(&trace.hidden, &params.fc2.weight, dlogits)?;
    grads.fc2.weight = fc2.weight;
    grads.fc2.bias = fc2.bias;
    let mut dhidden = fc2.input;
    if let (EmbeddingTap::Fc1, Some(g)) = (params.arch.tap, embedding_grad) {
        dhidden.data_mut().iter_mut().zip(g.data()).for_each(|(d, e)| *d += e);
    }
    relu_backward_inplace(&mut dhidden, &trace.hidden);

    let fc1 = dense_backward(&trace.flat, &params.fc1.weight, &dhidden)?;
    grads.fc1.weight = fc1.weight;
    grads.fc1.bias = fc1.bias;
    let mut dflat = fc1.input;
    if let (EmbeddingTap::Flatten, Some(g)) = (params.arch.tap, embedding_grad) {
        dflat.data_mut().iter_mut().zip(g.data()).for_each(|(d, e)| *d += e);
    }

    let (ph, pw) = params.arch.pooled_dims()[N_CONV - 1];
    let mut dx = dflat.reshaped(&[n, params.arch.channels[N_CONV - 1], ph, pw])?;
    for i in (0..N_CONV).rev() {
        let mut dy = maxpool2x2_backward(&dx, &trace.pool_argmax[i], trace.conv_out[i].shape())?;
        relu_backward_inplace(&mut dy, &trace.conv_out[i]);
        let layer = &params.conv[i];
        let g = conv2d_backward(&trace.conv_in[i], &layer.weight, &layer.bias, &dy, i > 0)?;
        grads.conv[i].weight = g.weight;
        grads.conv[i].bias = g.bias;
        if let Some(input) = g.input {
            dx = input;
        }
    }
    Ok(grads)
}
