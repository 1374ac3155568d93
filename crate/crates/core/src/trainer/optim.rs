//! Nesterov momentum SGD and the plateau learning-rate schedule.

use crate::error::{KwsError, Result};
use crate::nn::ModelParams;

/// One Nesterov update on flat buffers:
/// `v ← μ·v − lr·g`, `θ ← θ + v`, where `g` was evaluated at the
/// look-ahead point `θ + μ·v` (before this update).
pub fn nesterov_update(theta: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) {
    for ((t, g), v) in theta.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *t += *v;
    }
}

/// Applies [`nesterov_update`] to every parameter tensor.
pub fn nesterov_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    velocity: &mut ModelParams,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(velocity) {
        return Err(KwsError::shape("parameters, gradients and velocity differ in layout"));
    }
    if let Some(i) = grads.tensors().iter().position(|t| !t.is_finite()) {
        return Err(KwsError::NonFinite(format!("gradient of parameter tensor {i}")));
    }
    for ((p, g), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(velocity.tensors_mut())
    {
        nesterov_update(p.data_mut(), g.data(), v.data_mut(), lr, momentum);
    }
    Ok(())
}

/// The point the gradient is evaluated at: θ + μ·v.
pub fn lookahead(params: &ModelParams, velocity: &ModelParams, momentum: f64) -> Result<ModelParams> {
    let mut p = params.clone();
    if momentum != 0.0 {
        p.add_scaled(momentum, velocity)?;
    }
    Ok(p)
}

/// Decays the learning rate when the epoch loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    stale_epochs: usize,
    pub patience: usize,
    pub decay: f64,
    pub lr_min: f64,
}

impl PlateauSchedule {
    pub fn new(lr0: f64, patience: usize, decay: f64, lr_min: f64) -> Self {
        Self {
            lr: lr0.max(lr_min),
            best: f64::INFINITY,
            stale_epochs: 0,
            patience,
            decay,
            lr_min,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's mean loss and returns the rate for the next epoch.
    pub fn end_epoch(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs >= self.patience {
                self.lr = (self.lr * self.decay).max(self.lr_min);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}
