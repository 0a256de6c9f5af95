use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::check_shapes;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// First/second moments per parameter tensor plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }
}

/// One AdamW update at learning rate `lr`.
///
/// Decay is decoupled: `p <- p - lr * wd * p` is applied first (for tensors
/// whose `decay` flag is set), then the bias-corrected adaptive step.
pub fn adamw_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    decay: &[bool],
    state: &mut OptimizerState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    let sizes = state.sizes();
    check_shapes(&sizes, params.iter().map(|p| p.len()))?;
    check_shapes(&sizes, grads.iter().map(|g| g.len()))?;
    if decay.len() != sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: sizes.len(),
            actual: decay.len(),
        });
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let shrink = 1.0 - lr * cfg.weight_decay;

    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let step = lr / bc1;
    let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let shrink = if decay[k] { shrink } else { 1.0 };
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *pi = *pi * shrink - step * *mi / (vi.sqrt() * inv_sqrt_bc2 + cfg.eps);
        }
    }
    Ok(())
}

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0, at
/// epoch granularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_epochs: 50,
            total_epochs: 300,
        }
    }
}

impl CosineSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, total_epochs: usize) -> Result<Self> {
        if warmup_epochs >= total_epochs {
            return Err(Error::Config(format!(
                "warmup ({warmup_epochs}) must be shorter than training ({total_epochs} epochs)"
            )));
        }
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(Self {
            base_lr,
            warmup_epochs,
            total_epochs,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch} outside [0, {})",
                self.total_epochs
            )));
        }
        if epoch < self.warmup_epochs {
            return Ok(self.base_lr * epoch as f64 / self.warmup_epochs as f64);
        }
        let progress = (epoch - self.warmup_epochs) as f64
            / (self.total_epochs - self.warmup_epochs) as f64;
        Ok(0.5 * self.base_lr * (1.0 + (PI * progress).cos()))
    }
}
