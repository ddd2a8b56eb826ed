//! Adam with bias correction and a single-step learning-rate decay.

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators per parameter tensor. Each tensor keeps its own
/// step count because alternating updates leave half the model idle on
/// any given batch.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: Vec<u64>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: vec![0; params.len()],
        }
    }

    /// Updates parameter `k` in place.
    pub fn update(&mut self, k: usize, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() || self.m[k].shape() != param.shape() {
            return Err(Error::dim("adam_step", param.shape(), grad.shape()));
        }
        self.t[k] += 1;
        let t = self.t[k] as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let m = self.m[k].data_mut();
        let v = self.v[k].data_mut();
        for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// One Adam step on every parameter.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.t.len() {
        return Err(Error::dim("adam_step", &[params.len()], &[grads.len(), state.t.len()]));
    }
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(k, p, g, lr)?;
    }
    Ok(())
}

/// Learning rate for a 1-based epoch: the base rate, multiplied by the
/// decay factor from `decay_epoch` on.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch >= cfg.decay_epoch {
        cfg.learning_rate * cfg.decay_factor
    } else {
        cfg.learning_rate
    }
}
