use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Group, ParamGrads, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Adaptive moment estimation restricted to a set of parameter groups.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    groups: Vec<Group>,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig, groups: &[Group]) -> Self {
        Self {
            config,
            groups: groups.to_vec(),
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        let mut scale = 1.0;
        if let Some(limit) = self.config.clip_norm {
            let norm = libm::sqrt(
                grads
                    .iter()
                    .filter(|(id, _)| id.0 < store.len() && self.groups.contains(&store.entry(*id).group))
                    .map(|(_, g)| g.dot(g))
                    .sum::<f64>(),
            );
            if norm > limit {
                scale = limit / norm;
            }
        }
        if self.first.len() < store.len() {
            self.first.resize(store.len(), None);
            self.second.resize(store.len(), None);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (id, g) in grads.iter() {
            if id.0 >= store.len() || !self.groups.contains(&store.entry(id).group) {
                continue;
            }
            let m = self.first[id.0].get_or_insert_with(|| g.zeros_like());
            let v = self.second[id.0].get_or_insert_with(|| g.zeros_like());
            let param = store.get_mut(id).data_mut();
            for i in 0..param.len() {
                let gi = g.data()[i] * scale;
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = m.data()[i] / bc1;
                let vhat = v.data()[i] / bc2;
                param[i] -= lr * mhat / (libm::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}
