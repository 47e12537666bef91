//! Adaptive-moment optimizers: plain Adam for a single tensor (style-transfer
//! pixels) and decoupled-weight-decay AdamW over a [`ParamSet`].

use crate::nn::{Binding, ParamSet};
use crate::tape::Grads;
use crate::tensor::Tensor;
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay: 0.0,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam over one flat tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam {
            cfg,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, x: &mut Tensor, grad: &Tensor) {
        assert_eq!(x.len(), grad.len());
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for i in 0..x.len() {
            let g = grad.data()[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            x.data_mut()[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
        }
    }
}

/// Per-parameter first/second moment state, exposed for checkpointing.
#[derive(Debug, Clone, Default)]
pub struct AdamWState {
    pub t: u64,
    /// param index -> (m, v)
    pub moments: HashMap<usize, (Vec<f64>, Vec<f64>)>,
}

/// AdamW with decoupled weight decay over a parameter set. Frozen groups are
/// never touched and never accumulate state.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamConfig,
    state: AdamWState,
}

impl AdamW {
    pub fn new(cfg: AdamConfig) -> Self {
        AdamW {
            cfg,
            state: AdamWState::default(),
        }
    }

    pub fn state(&self) -> &AdamWState {
        &self.state
    }

    pub fn restore(cfg: AdamConfig, state: AdamWState) -> Self {
        AdamW { cfg, state }
    }

    /// Applies one update using the gradients of `binding`. Parameters whose
    /// group is frozen, or which received no gradient, are left untouched.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &Grads,
        binding: &Binding,
        frozen_groups: &HashSet<String>,
    ) {
        self.state.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(self.state.t as i32);
        let bc2 = 1.0 - b2.powi(self.state.t as i32);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for id in ids {
            if frozen_groups.contains(&params.entry(id).group) {
                continue;
            }
            let Some(grad) = grads.get(binding.var(id)) else {
                continue;
            };
            let n = grad.len();
            let (m, v) = self
                .state
                .moments
                .entry(id.0)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let x = params.get_mut(id);
            for i in 0..n {
                let g = grad.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let xi = &mut x.data_mut()[i];
                *xi -= self.cfg.lr * (mhat / (vhat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *xi);
            }
        }
    }
}
