//! Adam with bias correction. Moments are tracked per named tensor, each
//! with its own step counter, so a tensor that starts training late begins
//! from zero moments and a fresh bias correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    pub tensors: BTreeMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            tensors: BTreeMap::new(),
        }
    }

    /// Drops the moments of one tensor; its next update starts fresh.
    pub fn reset(&mut self, name: &str) {
        self.tensors.remove(name);
    }

    /// One update for every `(name, params, grads)` triple.
    pub fn step(&mut self, params: Vec<(&str, &mut [f64], &[f64])>, lr: f64) -> Result<()> {
        for (name, _, g) in &params {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite gradient {} at {name}[{i}]",
                    g[i]
                )));
            }
        }
        for (name, p, g) in params {
            let moments = self.tensors.entry(name.to_string()).or_default();
            adam_step(p, g, moments, lr, &self.config)?;
        }
        Ok(())
    }
}

/// `m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut Moments, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite gradient {} at index {i}", grads[i])));
    }
    if state.m.is_empty() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    } else if state.m.len() != params.len() {
        return Err(Error::Dimension("optimizer state does not match parameter shape".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
