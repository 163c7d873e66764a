use serde::{Deserialize, Serialize};

use super::param::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates, one slot per parameter of the set the
/// state is first used with.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every trainable parameter, after which
/// the gradients are reset to zero.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    if state.moments.is_empty() {
        state.moments = vec![None; params.len()];
    } else if state.moments.len() != params.len() {
        return Err(Error::InvalidState(format!(
            "optimizer state tracks {} parameters, parameter set has {}",
            state.moments.len(),
            params.len()
        )));
    }
    for p in params.params_mut() {
        if p.trainable() && p.grad.is_none() {
            return Err(Error::InvalidState(format!("parameter {} has no gradient", p.name)));
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (p, slot) in params.params_mut().iter_mut().zip(state.moments.iter_mut()) {
        if !p.trainable() {
            continue;
        }
        let n = p.numel();
        let (m, v) = slot.get_or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        if m.len() != n {
            return Err(Error::InvalidState(format!("optimizer moments for {} have the wrong size", p.name)));
        }
        let grad = p.grad.as_mut().expect("checked above");
        for (((w, g), mi), vi) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            let gi = *g + weight_decay * *w;
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
            *g = 0.0;
        }
    }
    Ok(())
}
