use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimisation hyperparameters for one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            weight_decay: 0.05,
            warmup_epochs: 1,
            max_epochs: 50,
            early_stop_patience: 10,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config("early_stop_patience must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs <= self.warmup_epochs {
            return Err(Error::Config(format!(
                "max_epochs ({}) must exceed warmup_epochs ({})",
                self.max_epochs, self.warmup_epochs
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "betas must lie in [0, 1) and weight_decay be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step learning rate: linear warmup over the first `warmup_epochs`
/// (step `s` gets `base * (s + 1) / warmup_steps`), then cosine annealing to
/// zero over the remaining steps.
pub fn lr_at(global_step: usize, steps_per_epoch: usize, config: &TrainConfig) -> f64 {
    let base = config.learning_rate;
    let warmup = config.warmup_epochs * steps_per_epoch;
    let total = config.max_epochs * steps_per_epoch;
    if global_step < warmup {
        return base * (global_step + 1) as f64 / warmup as f64;
    }
    if total <= warmup {
        return base;
    }
    let t = ((global_step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}
