use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w)`.
pub fn adamw_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamWState, cfg: &AdamWConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::InvalidShape(format!(
            "optimizer state for {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.no_decay)).collect();
    for (id, no_decay) in ids {
        let g = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let wd = if no_decay { 0.0 } else { cfg.weight_decay };
        let w = &mut store.value_mut(id).data;
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            w[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + wd * w[i]);
        }
    }
    Ok(())
}
