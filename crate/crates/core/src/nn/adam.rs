//! Adam with bias correction over a [`QNetwork`]'s tensors.

use super::network::{GradientSet, QNetwork, Tensors};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensors,
    pub v: Tensors,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &QNetwork) -> Self {
        let shape = net.shape();
        AdamState {
            m: Tensors::zeros(&shape),
            v: Tensors::zeros(&shape),
            step: 0,
        }
    }
}

/// One Adam update of `net` in place.
pub fn adam_step(net: &mut QNetwork, grads: &GradientSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if grads.shape() != net.shape() || state.m.w1.len() != net.params.w1.len() {
        return Err(Error::Contract("adam state or gradients do not match network".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let params = net.params.slices_mut();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.grads.slices()).zip(ms).zip(vs) {
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
