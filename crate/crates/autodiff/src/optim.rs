//! SGD with momentum, L2 weight decay and a poly learning-rate schedule.
//!
//! For every parameter `w` with gradient `g`, at iteration `t`:
//!
//! ```text
//! lr = base_lr · (1 − t / total_iters)^poly_power
//! g ← g + weight_decay · w        (decayed parameters only)
//! v ← momentum · v + g
//! w ← w − lr · v
//! ```

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub poly_power: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub total_iters: u64,
}

impl SgdConfig {
    pub const BASE_LR: f64 = 0.01;
    pub const POLY_POWER: f64 = 0.9;
    pub const WEIGHT_DECAY: f64 = 0.0005;
    pub const MOMENTUM: f64 = 0.9;

    pub fn with_total_iters(total_iters: u64) -> Self {
        Self {
            base_lr: Self::BASE_LR,
            poly_power: Self::POLY_POWER,
            weight_decay: Self::WEIGHT_DECAY,
            momentum: Self::MOMENTUM,
            total_iters,
        }
    }
}

/// Momentum buffers, one per parameter, plus the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: SgdConfig,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: SgdConfig, store: &ParamStore<T>) -> Result<Self> {
        if config.total_iters == 0 {
            return Err(Error::Invalid("total_iters must be >= 1".into()));
        }
        Ok(Self {
            config,
            velocity: store.entries().iter().map(|e| Tensor::zeros(e.value.shape())).collect(),
        })
    }
}

pub fn poly_lr(iter: u64, config: &SgdConfig) -> Result<f64> {
    if iter > config.total_iters {
        return Err(Error::Invalid(format!(
            "iteration {iter} beyond schedule of {} iterations",
            config.total_iters
        )));
    }
    let progress = iter as f64 / config.total_iters as f64;
    Ok(config.base_lr * (1.0 - progress).powf(config.poly_power))
}

/// Applies one update in place and returns the learning rate used.
pub fn sgd_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    iter: u64,
) -> Result<f64> {
    if grads.len() != store.len() || state.velocity.len() != store.len() {
        return Err(Error::Invalid(format!(
            "{} parameters, {} gradients, {} momentum buffers",
            store.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    let lr = poly_lr(iter, &state.config)?;
    let (lr_t, wd, mu) = (
        T::from_f64(lr),
        T::from_f64(state.config.weight_decay),
        T::from_f64(state.config.momentum),
    );
    for ((entry, grad), vel) in store.entries_mut().iter_mut().zip(grads).zip(&mut state.velocity) {
        if grad.shape() != entry.value.shape() || vel.shape() != entry.value.shape() {
            return Err(Error::Shape(format!("gradient/momentum shape mismatch for `{}`", entry.name)));
        }
        let decay = entry.decay;
        for ((w, &g), v) in entry.value.data_mut().iter_mut().zip(grad.data()).zip(vel.data_mut()) {
            let g = if decay { g + wd * *w } else { g };
            *v = mu * *v + g;
            *w -= lr_t * *v;
        }
    }
    Ok(lr)
}
