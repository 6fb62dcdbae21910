//! Stacked-LSTM link-speed predictor: parameters, forward pass, BPTT gradient,
//! momentum SGD, local training and RMSE.

mod data;
mod lstm;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{windows, Normalizer};
pub use lstm::{forward, grad};
pub use params::{init_params, LayerSpan, Layout, ModelParams};
pub use train::{local_train, rmse, sgd_step, LocalTraining, TrainConfig, Trainer, Velocity};

/// Channels per time step: speed, density, in-link speed.
pub const FEATURES: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("dimension: {0}")]
    Dimension(String),
    #[error("domain: {0}")]
    Domain(String),
    #[error("non-finite parameter at index {index}")]
    NonFinite { index: usize },
    #[error("optimizer diverged at parameter index {index}")]
    Divergence { index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Normalized feature window and next-step normalized speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: Vec<[f64; FEATURES]>,
    pub target: f64,
}

/// Flat gradient congruent with a [`ModelParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

/// Scenario-level learner settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub hidden: usize,
    pub layers: usize,
    pub window: usize,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier applied to the learning rate every `lr_drop_every` rounds.
    pub lr_drop: f64,
    pub lr_drop_every: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: 16,
            layers: 5,
            window: 3,
            lr: 0.05,
            momentum: 0.9,
            epochs: 3,
            batch_size: 8,
            lr_drop: 0.5,
            lr_drop_every: 50,
        }
    }
}

impl LearnerConfig {
    pub fn layout(&self) -> Result<Layout, LearnerError> {
        Layout::stacked(FEATURES, self.hidden, self.layers)
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        self.layout()?;
        if self.window == 0 {
            return Err(LearnerError::Config("window must be positive".into()));
        }
        if !(self.lr_drop > 0.0 && self.lr_drop <= 1.0) {
            return Err(LearnerError::Config("lr_drop must be in (0, 1]".into()));
        }
        if self.lr_drop_every == 0 {
            return Err(LearnerError::Config("lr_drop_every must be positive".into()));
        }
        self.train_config(0).validate()
    }

    /// Learning rate after `period` rounds (or epochs) of the drop schedule.
    pub fn lr_at(&self, period: usize) -> f64 {
        self.lr * self.lr_drop.powi((period / self.lr_drop_every) as i32)
    }

    pub fn train_config(&self, period: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr_at(period),
            momentum: self.momentum,
        }
    }
}
