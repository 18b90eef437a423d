use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineAnnealSchedule {
    pub eta_min: f64,
    pub eta_max: f64,
    pub steps_per_epoch: usize,
}

impl CosineAnnealSchedule {
    pub fn new(eta_min: f64, eta_max: f64, steps_per_epoch: usize) -> Result<Self> {
        if !(0.0 <= eta_min && eta_min <= eta_max) {
            return Err(Error::config(format!("need 0 <= eta_min <= eta_max, got {eta_min}, {eta_max}")));
        }
        if steps_per_epoch == 0 {
            return Err(Error::config("steps_per_epoch must be >= 1"));
        }
        Ok(Self { eta_min, eta_max, steps_per_epoch })
    }
}

/// `η = η_min + ½(η_max − η_min)(1 + cos(π·step/T_max))`.
pub fn cosine_anneal_lr(step: usize, schedule: &CosineAnnealSchedule) -> Result<f64> {
    let t_max = schedule.steps_per_epoch;
    if step > t_max {
        return Err(Error::OutOfRange { index: step, len: t_max + 1 });
    }
    let phase = step as f64 / t_max as f64;
    Ok(schedule.eta_min + 0.5 * (schedule.eta_max - schedule.eta_min) * (1.0 + (PI * phase).cos()))
}

/// Linear scaling rule (`target = k·base`) with a linear warmup.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupScalingPolicy {
    pub base_lr: f64,
    pub num_workers: usize,
    pub warmup_epochs: usize,
    pub target_lr: f64,
}

impl WarmupScalingPolicy {
    pub fn new(base_lr: f64, num_workers: usize, warmup_epochs: usize) -> Result<Self> {
        if num_workers == 0 {
            return Err(Error::config("num_workers must be >= 1"));
        }
        if !(base_lr > 0.0) {
            return Err(Error::config(format!("base_lr must be > 0, got {base_lr}")));
        }
        Ok(Self { base_lr, num_workers, warmup_epochs, target_lr: num_workers as f64 * base_lr })
    }
}

/// Ramps linearly from `target/W` at global step 1 to `target` at global step
/// `W = warmup_epochs · steps_per_epoch`, then holds `target`.
pub fn warmup_lr(epoch: usize, step_in_epoch: usize, policy: &WarmupScalingPolicy, steps_per_epoch: usize) -> f64 {
    let total = policy.warmup_epochs * steps_per_epoch;
    let global = epoch * steps_per_epoch + step_in_epoch + 1;
    if total == 0 || global >= total {
        policy.target_lr
    } else {
        policy.target_lr * global as f64 / total as f64
    }
}

/// Per-step learning rate for a whole run: optional warmup, constant target,
/// and per-epoch cosine annealing during the trailing SWA epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrPlan {
    pub policy: WarmupScalingPolicy,
    pub use_warmup: bool,
    pub epochs: usize,
    pub swa_epochs: usize,
    /// `η_min = eta_min_ratio · η_max` inside SWA epochs.
    pub eta_min_ratio: f64,
    pub steps_per_epoch: usize,
}

impl LrPlan {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_epoch == 0 {
            return Err(Error::config("steps_per_epoch must be >= 1"));
        }
        if self.swa_epochs > self.epochs {
            return Err(Error::config(format!(
                "swa_epochs {} exceeds epochs {}",
                self.swa_epochs, self.epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.eta_min_ratio) {
            return Err(Error::config(format!("eta_min_ratio must be in [0, 1], got {}", self.eta_min_ratio)));
        }
        let warmup = if self.use_warmup { self.policy.warmup_epochs } else { 0 };
        if self.swa_epochs > 0 && warmup > self.epochs - self.swa_epochs {
            return Err(Error::config(format!(
                "warmup epochs 0..{warmup} overlap SWA epochs {}..{}",
                self.epochs - self.swa_epochs,
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn target_lr(&self) -> f64 {
        self.policy.target_lr
    }

    pub fn swa_start(&self) -> usize {
        self.epochs - self.swa_epochs
    }

    pub fn is_swa_epoch(&self, epoch: usize) -> bool {
        self.swa_epochs > 0 && epoch >= self.swa_start()
    }

    pub fn lr(&self, epoch: usize, step_in_epoch: usize) -> Result<f64> {
        if self.is_swa_epoch(epoch) {
            let eta_max = self.policy.target_lr;
            let schedule = CosineAnnealSchedule::new(eta_max * self.eta_min_ratio, eta_max, self.steps_per_epoch)?;
            return cosine_anneal_lr(step_in_epoch, &schedule);
        }
        if self.use_warmup {
            Ok(warmup_lr(epoch, step_in_epoch, &self.policy, self.steps_per_epoch))
        } else {
            Ok(self.policy.target_lr)
        }
    }
}
