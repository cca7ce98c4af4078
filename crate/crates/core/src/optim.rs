use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers and step counter for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay.
///
/// Every parameter is first shrunk by `lr·λ·value`, then moved by the
/// bias-corrected Adam direction. `grads` must hold one entry per parameter
/// in [`ModelParams`] order.
pub fn adam_step(params: &mut ModelParams, grads: &[Option<Vec<f32>>], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(Error::Internal(alloc::format!(
            "adam_step: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        match g {
            None => return Err(Error::MissingGradient { name: p.name.clone() }),
            Some(g) if g.len() != p.value.numel() => {
                return Err(Error::Internal(alloc::format!("gradient size mismatch for `{}`", p.name)))
            }
            Some(_) => {}
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::powf(c.beta1, t as f32);
    let bc2 = 1.0 - libm::powf(c.beta2, t as f32);
    for (i, tensor) in params.values_mut().enumerate() {
        let g = grads[i].as_ref().unwrap();
        let value = tensor.data_mut();
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for k in 0..value.len() {
            value[k] -= c.learning_rate * c.weight_decay * value[k];
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            value[k] -= c.learning_rate * m_hat / (libm::sqrtf(v_hat) + c.eps);
        }
    }
    Ok(())
}
