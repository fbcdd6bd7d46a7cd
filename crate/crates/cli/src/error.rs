use std::path::PathBuf;

use labelattn_core::corpus::CorpusError;
use labelattn_core::encoder::EncoderError;
use labelattn_core::tokenizer::TokenizerError;
use labelattn_core::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 0 success, 2 config/usage, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss(_) | TrainError::NonFiniteGradient(_) => CliError::Numerical(e.to_string()),
            TrainError::Config(_) | TrainError::EmptyDev => CliError::Config(e.to_string()),
            TrainError::Io(source) => CliError::Io {
                path: PathBuf::from("<training log>"),
                source,
            },
            TrainError::Encoder(e) => e.into(),
            TrainError::Segment(e) => CliError::Config(e.to_string()),
            TrainError::Head(e) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Io(source) => CliError::Io {
                path: PathBuf::from("<checkpoint>"),
                source,
            },
            EncoderError::Config(_) | EncoderError::Mismatch { .. } | EncoderError::Length { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(source) => CliError::Io {
                path: PathBuf::from("<corpus>"),
                source,
            },
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        match e {
            TokenizerError::Io(source) => CliError::Io {
                path: PathBuf::from("<tokenizer>"),
                source,
            },
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
