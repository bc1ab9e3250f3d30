use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherSchedule {
    /// Hold the initial probability, then decay linearly to zero at the
    /// final optimizer step.
    Decay,
    Constant,
}

/// Optimization and episode settings. Loaded from a flat TOML file whose
/// keys are the field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Episodes per forward/backward pass inside a batch.
    pub micro_batch: usize,
    /// Variance of the Gaussian noise added to every training gesture coordinate.
    pub noise_variance: f64,
    pub p_m: f64,
    pub p_tf_init: f64,
    pub p_tf_hold: usize,
    pub p_tf_schedule: TeacherSchedule,
    pub context_clips: usize,
    /// Optimizer steps between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            epochs: 738,
            batch_size: 32,
            micro_batch: 8,
            noise_variance: 1e-6,
            p_m: 0.5,
            p_tf_init: 0.9,
            p_tf_hold: 600,
            p_tf_schedule: TeacherSchedule::Decay,
            context_clips: 4,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_m, self.p_tf_init];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!("probabilities {probs:?} must lie in [0, 1]")));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.micro_batch == 0 || self.context_clips == 0 {
            return Err(Error::InvalidArgument("epochs, batch sizes and context clips must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument("lr must be positive and noise variance nonnegative".into()));
        }
        Ok(())
    }
}

/// Teacher-forcing probability at optimizer step `step` of `total_steps`.
pub fn p_tf_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let init = cfg.p_tf_init;
    let last = total_steps.saturating_sub(1);
    if cfg.p_tf_schedule == TeacherSchedule::Constant || step < cfg.p_tf_hold || last <= cfg.p_tf_hold {
        return init;
    }
    let left = last.saturating_sub(step) as f64 / (last - cfg.p_tf_hold) as f64;
    (init * left).clamp(0.0, init)
}
