use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::ParameterState;
use crate::error::{Result, SsflError};

/// Cosine learning-rate decay with a linear warmup.
///
/// Steps are counted in mini-batches: an epoch is `samples_per_epoch /
/// batch_size` steps, so the schedule spans `epochs * samples_per_epoch /
/// batch_size` steps of which the first `warmup_epochs * samples_per_epoch /
/// batch_size` ramp linearly up to `base_lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub period_coeff: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub warmup_epochs: usize,
    pub floor: f64,
}

impl LrSchedule {
    /// Cifar-10 row of the reference hyperparameter table.
    pub fn cifar10() -> Self {
        Self {
            base_lr: 0.146,
            period_coeff: 2.3,
            epochs: 300,
            samples_per_epoch: 65536,
            batch_size: 64,
            warmup_epochs: 5,
            floor: 1e-4,
        }
    }

    /// SVHN row: Cifar-10 settings over 40 epochs.
    pub fn svhn() -> Self {
        Self { epochs: 40, ..Self::cifar10() }
    }

    /// EMNIST row.
    pub fn emnist() -> Self {
        Self {
            base_lr: 0.03,
            period_coeff: 0.4375,
            epochs: 100,
            samples_per_epoch: 65536,
            batch_size: 64,
            warmup_epochs: 0,
            floor: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(SsflError::invalid("base learning rate must be positive"));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(SsflError::invalid("learning-rate floor must lie in (0, 1)"));
        }
        if self.batch_size == 0 || self.samples_per_epoch < self.batch_size {
            return Err(SsflError::invalid("need samples_per_epoch >= batch_size > 0"));
        }
        if !self.period_coeff.is_finite() {
            return Err(SsflError::invalid("period coefficient must be finite"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(SsflError::invalid("warmup must be shorter than training"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.samples_per_epoch / self.batch_size
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.samples_per_epoch / self.batch_size
    }
}

pub fn cosine_lr(step: usize, schedule: &LrSchedule) -> Result<f64> {
    let total = schedule.total_steps();
    if step >= total {
        return Err(SsflError::OutOfRange { step, total });
    }
    let warmup = schedule.warmup_steps();
    if step < warmup {
        return Ok(schedule.base_lr * (step + 1) as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    let cosine = (PI * schedule.period_coeff * progress).cos();
    Ok(schedule.base_lr * cosine.max(schedule.floor))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SsflError::invalid("momentum coefficient must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(SsflError::invalid("weight decay must be non-negative"));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { schedule: LrSchedule::emnist(), momentum: 0.9, weight_decay: 1e-4 }
    }
}

/// SGD with heavy-ball momentum and coupled weight decay:
/// `m <- mu m + (g + wd w)`, `w <- w - lr m`.
pub fn sgd_step(state: &mut ParameterState, gradient: &[f64], lr: f64, cfg: &OptimizerConfig) -> Result<()> {
    if gradient.len() != state.weights.len() || state.momentum.len() != state.weights.len() {
        return Err(SsflError::invalid(format!(
            "gradient length {} does not match {} weights",
            gradient.len(),
            state.weights.len()
        )));
    }
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    for ((w, m), &g) in state.weights.iter_mut().zip(state.momentum.iter_mut()).zip(gradient) {
        *m = mu * *m + (g + wd * *w);
        *w -= lr * *m;
    }
    Ok(())
}
