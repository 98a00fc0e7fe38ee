//! Linear-warmup + cosine-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::NnError;

/// Schedule shape: `warmup_epochs` of linear ramp to `peak_lr`, then cosine
/// decay down to `alpha * peak_lr` at the final step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub alpha: f64,
    /// Set from the data by the trainer (batches per epoch).
    pub steps_per_epoch: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            peak_lr: 0.1,
            warmup_epochs: 5,
            total_epochs: 50,
            alpha: 0.01,
            steps_per_epoch: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.warmup_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(NnError::InvalidConfig(format!(
                "warmup_epochs {} must satisfy 0 < warmup < total {}",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(NnError::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.peak_lr <= 0.0 || self.steps_per_epoch == 0 {
            return Err(NnError::InvalidConfig(
                "peak_lr and steps_per_epoch must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }
}

/// Learning rate at a global step.
///
/// Warmup: `peak_lr * (step + 1) / warmup_steps`. Decay: with progress p
/// running from 0 at the first decay step to exactly 1 at the final step,
/// `peak_lr * (alpha + (1 - alpha) * 0.5 * (1 + cos(pi * p)))`.
pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> Result<f64, NnError> {
    let total = cfg.total_steps();
    if step >= total {
        return Err(NnError::StepOutOfRange { step, total });
    }
    let warmup = cfg.warmup_steps();
    if step < warmup {
        return Ok(cfg.peak_lr * (step + 1) as f64 / warmup as f64);
    }
    let span = total - warmup - 1;
    let progress = if span == 0 {
        1.0
    } else {
        (step - warmup) as f64 / span as f64
    };
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(cfg.peak_lr * (cfg.alpha + (1.0 - cfg.alpha) * cosine))
}
