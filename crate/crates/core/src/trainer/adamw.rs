//! AdamW: Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Per-parameter moment buffers, aligned with the model's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Real> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &[(String, Tensor<T>)]) -> Self {
        AdamWState {
            step: 0,
            m: params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One optimizer step over all parameters. Decoupled weight decay is applied
/// to the parameter first (`theta -= lr * wd * theta`), then the
/// bias-corrected moment update. Parameters without a gradient are skipped.
/// Aborts without touching any parameter if any gradient is non-finite.
pub fn adamw_step<T: Real>(
    params: &[(String, Tensor<T>)],
    state: &mut AdamWState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), state.m.len(), "state/parameter count mismatch");
    let grads: Vec<Option<Vec<T>>> = params.iter().map(|(_, p)| p.grad()).collect();
    for ((name, _), g) in params.iter().zip(&grads) {
        if let Some(g) = g {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGradient(name.clone()));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let bc1 = T::one() - T::from_f64(cfg.beta1).powi(t);
    let bc2 = T::one() - T::from_f64(cfg.beta2).powi(t);
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(cfg.eps);
    let decay = T::from_f64(lr * cfg.weight_decay);
    for (((_, p), g), (m, v)) in params
        .iter()
        .zip(&grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let Some(g) = g else { continue };
        let mut data = p.data_mut();
        for i in 0..data.len() {
            let decayed = data[i] - decay * data[i];
            data[i] = decayed;
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
