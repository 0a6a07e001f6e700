use crate::error::{Error, Result};
use crate::numeric::mlp::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators with the same shape as the parameters they update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: NetworkParams,
    pub v: NetworkParams,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &NetworkParams) -> Self {
        Self {
            config,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }
}

/// One bias-corrected Adam descent step, `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(state: &mut AdamState, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Shape("Adam state, parameters and gradients differ in shape".into()));
    }
    for (name, block) in grads.blocks() {
        if block.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {name}")));
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let grads_flat = grads.blocks();
    let m_blocks = state.m.blocks_mut();
    let v_blocks = state.v.blocks_mut();
    let p_blocks = params.blocks_mut();
    for (((p, m), v), (_, g)) in p_blocks.into_iter().zip(m_blocks).zip(v_blocks).zip(grads_flat) {
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            p[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
