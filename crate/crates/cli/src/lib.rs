//! Reproducible experiments on top of `labelattn-core`: configuration,
//! data generation, pretraining, fine-tuning, evaluation, ablation suites
//! and cross-run reports.

pub mod ablate;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
