//! Nadam: Adam with a Nesterov look-ahead on the first moment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Gradients, ModelWeights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for NadamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl NadamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Parameter("epsilon must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Parameter(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NadamState {
    pub config: NadamConfig,
    /// Completed steps.
    pub t: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

/// Zero moments shaped like `params`, `t = 0`.
pub fn init_state_for(params: &[&Tensor], config: NadamConfig) -> Result<NadamState> {
    config.validate()?;
    let zeros: Vec<Tensor> = params.iter().map(|t| t.zeros_like()).collect();
    Ok(NadamState {
        config,
        t: 0,
        first_moment: zeros.clone(),
        second_moment: zeros,
    })
}

pub fn init_state(weights: &ModelWeights, config: NadamConfig) -> Result<NadamState> {
    init_state_for(&weights.trainable(), config)
}

/// One update of `params` in place. Nothing is modified if any check fails.
pub fn step(state: &mut NadamState, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
    state.config.validate()?;
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, got {} parameters and {} gradients",
            state.first_moment.len(),
            params.len(),
            grads.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        if p.shape != g.shape || p.shape != m.shape || p.data.len() != g.data.len() {
            return Err(Error::Shape(format!(
                "tensor {} {:?}: gradient {:?}, moment {:?}",
                p.name, p.shape, g.shape, m.shape
            )));
        }
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in tensor {}", p.name)));
        }
    }

    let NadamConfig {
        lr,
        beta1,
        beta2,
        eps,
        clip_norm,
    } = state.config;
    let scale = match clip_norm {
        Some(limit) => {
            let norm = grads
                .iter()
                .flat_map(|g| &g.data)
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > limit {
                limit / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };

    state.t += 1;
    let t = state.t as f64;
    let bias1_next = 1.0 - beta1.powf(t + 1.0);
    let bias1 = 1.0 - beta1.powf(t);
    let bias2 = 1.0 - beta2.powf(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        for i in 0..p.data.len() {
            let gi = g.data[i] * scale;
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * gi;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m.data[i] / bias1_next;
            let m_bar = beta1 * m_hat + (1.0 - beta1) * gi / bias1;
            let v_hat = v.data[i] / bias2;
            p.data[i] -= lr * m_bar / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Update every trainable tensor of `weights`.
pub fn nadam_step(state: &mut NadamState, weights: &mut ModelWeights, grads: &Gradients) -> Result<()> {
    let mut params = weights.trainable_mut();
    for (p, g) in params.iter().zip(&grads.tensors) {
        if p.name != g.name {
            return Err(Error::Shape(format!("gradient {} does not line up with tensor {}", g.name, p.name)));
        }
    }
    step(state, &mut params, &grads.tensors)?;
    weights.mark_updated();
    Ok(())
}
