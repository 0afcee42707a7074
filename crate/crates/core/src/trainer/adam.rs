//! Adam with bias correction and coupled L2 weight decay, with per-group
//! learning rates so a pretrained feature extractor can move more slowly
//! than freshly initialized layers.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 decay: the decay term joins the gradient before the
    /// moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

struct Slot<F: Scalar> {
    name: String,
    param: Tensor<F>,
    m: Vec<F>,
    v: Vec<F>,
}

struct Group<F: Scalar> {
    base_lr: f64,
    slots: Vec<Slot<F>>,
}

pub struct Adam<F: Scalar> {
    config: AdamConfig,
    groups: Vec<Group<F>>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    /// `groups`: (named parameters, base learning rate) per group.
    pub fn new(groups: Vec<(Vec<(String, Tensor<F>)>, f64)>, config: AdamConfig) -> Self {
        let groups = groups
            .into_iter()
            .map(|(params, base_lr)| Group {
                base_lr,
                slots: params
                    .into_iter()
                    .map(|(name, param)| {
                        let n = param.numel();
                        Slot { name, param, m: vec![F::zero(); n], v: vec![F::zero(); n] }
                    })
                    .collect(),
            })
            .collect();
        Adam { config, groups, t: 0 }
    }

    pub fn zero_grad(&self) {
        for g in &self.groups {
            for s in &g.slots {
                s.param.zero_grad();
            }
        }
    }

    /// One update with each group's learning rate scaled by `lr_scale`
    /// (the schedule). Parameters that received no gradient are skipped.
    pub fn step(&mut self, lr_scale: f64) -> Result<()> {
        self.t += 1;
        let b1 = F::from_f64(self.config.beta1).unwrap();
        let b2 = F::from_f64(self.config.beta2).unwrap();
        let eps = F::from_f64(self.config.eps).unwrap();
        let wd = F::from_f64(self.config.weight_decay).unwrap();
        let bc1 = F::one() - F::from_f64(self.config.beta1.powi(self.t as i32)).unwrap();
        let bc2 = F::one() - F::from_f64(self.config.beta2.powi(self.t as i32)).unwrap();
        for group in &mut self.groups {
            let lr = F::from_f64(group.base_lr * lr_scale).unwrap();
            for slot in &mut group.slots {
                let Some(grad) = slot.param.grad() else { continue };
                if grad.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of {}", slot.name)));
                }
                slot.param.update_data(|theta| {
                    for i in 0..theta.len() {
                        let g = grad[i] + wd * theta[i];
                        slot.m[i] = b1 * slot.m[i] + (F::one() - b1) * g;
                        slot.v[i] = b2 * slot.v[i] + (F::one() - b2) * g * g;
                        let mhat = slot.m[i] / bc1;
                        let vhat = slot.v[i] / bc2;
                        theta[i] = theta[i] - lr * mhat / (vhat.sqrt() + eps);
                    }
                });
            }
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// Half-cosine decay from `lr0` at epoch 0 to 0 at epoch `t_max`.
pub fn cosine_lr(lr0: f64, epoch: usize, t_max: usize) -> f64 {
    if t_max == 0 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * epoch as f64 / t_max as f64).cos())
}
