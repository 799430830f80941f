use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{CnmError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First and second moments for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F = f32> {
    pub m: Tensor<F>,
    pub v: Tensor<F>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step on `param` in place.
pub fn adam_update<F: Real>(
    name: &str,
    param: &mut Tensor<F>,
    grad: &[F],
    state: &mut AdamState<F>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.len() || state.m.shape() != param.shape() {
        return Err(CnmError::dim("adam_update", param.shape(), &[grad.len()]));
    }
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(CnmError::Training(format!(
            "non-finite gradient for parameter {name} at element {bad}"
        )));
    }
    state.t += 1;
    let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
    let bc1 = F::lit(1.0 - cfg.beta1.powi(state.t as i32));
    let bc2 = F::lit(1.0 - cfg.beta2.powi(state.t as i32));
    let (lr, eps) = (F::lit(lr), F::lit(cfg.eps));
    let one = F::one();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad).zip(m).zip(v) {
        *mi = b1 * *mi + (one - b1) * g;
        *vi = b2 * *vi + (one - b2) * g * g;
        let mhat = *mi / bc1;
        let vhat = *vi / bc2;
        *p -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
