//! Adaptive-moment gradient descent.

use super::params::{ParamKind, ParamStore};
use super::tensor::Tensor;

pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    active: Vec<bool>,
}

impl Adam {
    /// `frozen_prefixes` name parameter groups excluded from updates.
    pub fn new(store: &ParamStore, cfg: AdamConfig, frozen_prefixes: &[&str]) -> Self {
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        let mut active = Vec::with_capacity(store.len());
        for e in store.iter() {
            m.push(Tensor::zeros(e.value.shape()));
            v.push(Tensor::zeros(e.value.shape()));
            let frozen = frozen_prefixes.iter().any(|p| e.name.starts_with(p));
            active.push(e.kind == ParamKind::Weight && !frozen);
        }
        Adam {
            cfg,
            step: 0,
            m,
            v,
            active,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }

    /// One update from the gradients currently in the store. Grads are not
    /// cleared here; callers zero them at the start of each step.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for idx in 0..store.len() {
            if !self.active[idx] {
                continue;
            }
            let entry = store.entry_mut(idx);
            let m = self.m[idx].data_mut();
            let v = self.v[idx].data_mut();
            let g = entry.grad.data();
            let p = entry.value.data_mut();
            for i in 0..g.len() {
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * g[i];
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.cfg.learning_rate * mhat / (vhat.sqrt() + self.cfg.eps);
            }
        }
    }
}
