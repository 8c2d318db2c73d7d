use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdamError {
    #[error("gradient entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("length mismatch: {params} parameters, {grads} gradients, {moments} moments")]
    Shape { params: usize, grads: usize, moments: usize },
    #[error("step index must start at 1")]
    ZeroStep,
}

/// One bias-corrected Adam update at step `t` (1-based). Nothing is modified
/// when an error is returned.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    t: u64,
    config: &AdamConfig,
) -> Result<(), AdamError> {
    if grads.len() != params.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(AdamError::Shape {
            params: params.len(),
            grads: grads.len(),
            moments: moments.m.len().min(moments.v.len()),
        });
    }
    if t == 0 {
        return Err(AdamError::ZeroStep);
    }
    if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(AdamError::NonFinite { index, value });
    }
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *config;
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let c1 = 1.0 - b1.powi(exp);
    let c2 = 1.0 - b2.powi(exp);
    for i in 0..params.len() {
        let g = grads[i];
        let m = b1 * moments.m[i] + (1.0 - b1) * g;
        let v = b2 * moments.v[i] + (1.0 - b2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
    Ok(())
}
