//! Optimization: AdamW, learning-rate schedules, the classification loss,
//! threshold tuning and the fine-tuning loop.

mod adamw;
mod loss;
mod model;
mod schedule;
mod threshold;
mod trainer;

pub use adamw::{AdamW, AdamWConfig};
pub use loss::{bce_batch, bce_loss};
pub use model::{EncodedDoc, Model, ModelConfig};
pub use schedule::{LrSchedule, ScheduleKind};
pub use threshold::{decide, threshold_grid, tune_per_label_thresholds, tune_threshold};
pub use trainer::{evaluate_docs, predict_docs, train, EpochRecord, Thresholds, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::heads::HeadError;
use crate::segmenter::SegmentError;
use crate::metrics::MetricsError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at {0}")]
    NonFiniteLoss(String),
    #[error("dev set is empty; cannot tune a threshold")]
    EmptyDev,
    #[error("label vector length mismatch: gold {gold}, predicted {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    /// Tune one threshold per label instead of a single global one.
    pub per_label_thresholds: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            peak_lr: 5e-5,
            warmup_steps: 2000,
            batch_size: 8,
            weight_decay: 0.01,
            schedule: ScheduleKind::LinearDecay,
            per_label_thresholds: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(TrainError::Config(format!("peak_lr {} must be positive", self.peak_lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self, total_steps: u64) -> LrSchedule {
        LrSchedule {
            peak: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps,
            kind: self.schedule,
        }
    }
}
