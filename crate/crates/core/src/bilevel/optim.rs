use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Gradients, ParamId, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip applied before weight decay; 0 disables.
    pub grad_clip: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.025,
            momentum: 0.9,
            weight_decay: 3e-4,
            grad_clip: 5.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.weight_decay >= 0.0
            && self.grad_clip >= 0.0
            && [self.lr, self.momentum, self.weight_decay, self.grad_clip]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::invalid(format!("invalid SGD settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.999,
            weight_decay: 1e-3,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.weight_decay >= 0.0
            && self.eps > 0.0
            && [self.lr, self.weight_decay, self.eps].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::invalid(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

/// `base · ½(1 + cos(π·epoch/total))`, reaching exactly 0 at `epoch == total`.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = epoch.min(total) as f64 / total as f64;
    base * 0.5 * (1.0 + (PI * t).cos())
}

/// SGD with momentum and weight decay over a fixed set of parameters.
#[derive(Clone, Debug)]
pub struct Sgd {
    cfg: SgdConfig,
    ids: Vec<ParamId>,
    velocity: BTreeMap<ParamId, Tensor>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, ids: &[ParamId], store: &ParamStore) -> Self {
        let velocity = ids
            .iter()
            .map(|&id| (id, Tensor::zeros(store.get(id).shape())))
            .collect();
        Self {
            cfg,
            ids: ids.to_vec(),
            velocity,
        }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor> {
        self.velocity.get(&id)
    }

    /// One update at learning rate `lr`. Returns the gradient norm before
    /// clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> f64 {
        let norm = grads.norm(&self.ids);
        let clip = if self.cfg.grad_clip > 0.0 && norm > self.cfg.grad_clip {
            self.cfg.grad_clip / (norm + 1e-6)
        } else {
            1.0
        };
        for &id in &self.ids {
            let Some(g) = grads.get(id) else {
                continue;
            };
            let v = self.velocity.get_mut(&id).expect("velocity per parameter");
            let w = store.get_mut(id);
            for ((wi, vi), &gi) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                let d = gi * clip + self.cfg.weight_decay * *wi;
                *vi = self.cfg.momentum * *vi + d;
                *wi -= lr * *vi;
            }
        }
        norm
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    id: ParamId,
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, id: ParamId, store: &ParamStore) -> Self {
        let shape = store.get(id).shape().to_vec();
        Self {
            cfg,
            id,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Returns the raw gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> f64 {
        let g = grads.get_or_zeros(self.id, store);
        let norm = g.norm();
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let a = store.get_mut(self.id);
        for (((ai, mi), vi), &gi) in a
            .data_mut()
            .iter_mut()
            .zip(self.m.data_mut())
            .zip(self.v.data_mut())
            .zip(g.data())
        {
            let d = gi + c.weight_decay * *ai;
            *mi = c.beta1 * *mi + (1.0 - c.beta1) * d;
            *vi = c.beta2 * *vi + (1.0 - c.beta2) * d * d;
            let mh = *mi / bc1;
            let vh = *vi / bc2;
            *ai -= c.lr * mh / (vh.sqrt() + c.eps);
        }
        norm
    }
}
