use std::path::{Path, PathBuf};

use labelattn_core::corpus::SyntheticSpec;
use labelattn_core::encoder::EncoderConfig;
use labelattn_core::heads::HeadConfig;
use labelattn_core::segmenter::SegmenterConfig;
use labelattn_core::tokenizer::TokenizerConfig;
use labelattn_core::training::{ScheduleKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub schedule: ScheduleKind,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            peak_lr: 1e-4,
            warmup_steps: 200,
            schedule: ScheduleKind::LinearDecay,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Write per-label top-k attention positions next to the predictions.
    pub dump_attention: bool,
    pub attention_top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dump_attention: false,
            attention_top_k: 10,
        }
    }
}

/// One experiment, fully resolved. `seed` has no default and is copied
/// into every module's own seed field by [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    /// Keep only the k most frequent training labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k_labels: Option<usize>,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub segmenter: SegmenterConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            corpus: Some(SyntheticSpec::default()),
            data_path: None,
            top_k_labels: None,
            tokenizer: TokenizerConfig::default(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            segmenter: SegmenterConfig::default(),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
        }
        .resolved()
    }

    /// Smoke-run preset: 1k documents, 50 labels, one encoder layer,
    /// three epochs.
    pub fn quick(seed: u64) -> Self {
        let mut c = Self::with_seed(seed);
        c.corpus = Some(SyntheticSpec {
            num_labels: 50,
            train_docs: 1000,
            dev_docs: 100,
            test_docs: 100,
            doc_len_mean: 256,
            doc_len_min: 128,
            doc_len_max: 384,
            ..SyntheticSpec::default()
        });
        c.encoder = EncoderConfig {
            layers: 1,
            heads: 2,
            hidden: 32,
            ffn: 64,
            max_positions: 34,
            dropout: 0.1,
            ..c.encoder
        };
        c.segmenter = SegmenterConfig {
            segment_len: 32,
            max_doc_len: 384,
            ..Default::default()
        };
        c.train = TrainConfig {
            epochs: 3,
            peak_lr: 2e-3,
            warmup_steps: 50,
            ..c.train
        };
        c.pretrain = PretrainConfig {
            steps: 200,
            warmup_steps: 20,
            peak_lr: 1e-3,
            ..PretrainConfig::default()
        };
        c.resolved()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let c = c.resolved();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        *self = self.clone().resolved();
    }

    fn resolved(mut self) -> Self {
        if let Some(c) = &mut self.corpus {
            c.seed = self.seed;
        }
        self.encoder.seed = self.seed;
        self.head.seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.corpus, &self.data_path) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("set either `corpus` or `data_path`, not both".into()))
            }
            (Some(c), None) => c.validate()?,
            _ => {}
        }
        if self.top_k_labels == Some(0) {
            return Err(CliError::Config("top_k_labels must be positive".into()));
        }
        self.encoder
            .validate()
            .map_err(|e| CliError::Config(format!("encoder: {e}")))?;
        self.segmenter
            .validate(self.encoder.max_positions)
            .map_err(|e| CliError::Config(format!("segmenter: {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        if self.pretrain.batch_size == 0 || self.pretrain.warmup_steps > self.pretrain.steps {
            return Err(CliError::Config(
                "pretrain: batch_size must be positive and warmup_steps at most steps".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
