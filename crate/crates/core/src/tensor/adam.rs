//! Adam with bias correction, restricted to trainable parameters.

use super::params::ParamStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: first/second moment per parameter (empty vectors for
/// frozen entries) plus the shared step count.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub step_count: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m = store
            .iter()
            .map(|p| if p.trainable { vec![0.0; p.value.numel()] } else { Vec::new() })
            .collect();
        let v = store
            .iter()
            .map(|p| if p.trainable { vec![0.0; p.value.numel()] } else { Vec::new() })
            .collect();
        Adam { cfg, step_count: 0, m, v }
    }

    /// Apply one update from the accumulated grads, then clear them.
    /// Frozen parameters are never touched, whatever their grad buffers
    /// hold. NaN/Inf in a trainable grad is an error and leaves values
    /// unmodified.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for p in store.iter() {
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::Numerical(format!("non-finite gradient for '{}'", p.name)));
            }
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        for (idx, p) in store.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.value.numel() {
                let g = p.grad.data[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                p.value.data[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            p.grad.data.fill(0.0);
        }
        Ok(())
    }
}
