//! AdamW with decoupled weight decay and a step learning-rate schedule.

use crate::autodiff::Tensor;
use crate::model::params::ParamStore;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Epoch at which the learning rate is multiplied by `lr_drop_factor`.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            lr_drop_epoch: None,
            lr_drop_factor: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: OptimConfig,
    pub step: u64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

impl AdamW {
    pub fn new(cfg: OptimConfig) -> Self {
        AdamW {
            cfg,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Learning rate for the given epoch under the step schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.cfg.lr_drop_epoch {
            Some(drop) if epoch >= drop => self.cfg.lr * self.cfg.lr_drop_factor,
            _ => self.cfg.lr,
        }
    }

    /// One update over every named gradient. Weight decay is decoupled:
    /// it scales the parameter directly, independent of the moments.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &IndexMap<String, Tensor>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, g) in grads {
            let p = store.get_mut(name);
            assert_eq!(p.shape(), g.shape(), "gradient shape for {name}");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows, g.cols));
            for i in 0..g.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
                v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * (mhat / (vhat.sqrt() + self.cfg.eps)
                    + self.cfg.weight_decay * p.data[i]);
            }
        }
    }
}

/// Plain gradient descent, used by small diagnostic loops.
pub fn sgd_step(store: &mut ParamStore, grads: &IndexMap<String, Tensor>, lr: f64) {
    for (name, g) in grads {
        let p = store.get_mut(name);
        for i in 0..g.len() {
            p.data[i] -= lr * g.data[i];
        }
    }
}
