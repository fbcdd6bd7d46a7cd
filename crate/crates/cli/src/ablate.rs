//! Ablation suites: each runs a set of variants that differ in one factor
//! on shared data and seed, then writes a comparison table.

use std::fs;
use std::path::Path;

use labelattn_core::heads::HeadKind;
use labelattn_core::segmenter::{TruncateMode, Truncation};
use labelattn_core::training::ScheduleKind;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{fit, load_dataset, pretrain, prepare, unix_now, write_atomic, write_run_files, Init};
use crate::report::{render, Format, Row};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Heads,
    Pretrain,
    Lengths,
    Truncation,
    TopK,
    Schedule,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Heads => "heads",
            Suite::Pretrain => "pretrain",
            Suite::Lengths => "lengths",
            Suite::Truncation => "truncation",
            Suite::TopK => "top-k",
            Suite::Schedule => "schedule",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        <Suite as clap::ValueEnum>::from_str(s, false).map_err(|_| {
            CliError::Config(format!(
                "unknown suite {s:?} (expected heads, pretrain, lengths, truncation, top-k or schedule)"
            ))
        })
    }
}

/// A named configuration change.
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
    pub pretrained: bool,
}

fn variant(name: impl Into<String>, config: ExperimentConfig) -> Variant {
    Variant {
        name: name.into(),
        config,
        pretrained: false,
    }
}

/// Label count of the synthetic corpus named by `base`, if any.
fn corpus_labels(base: &ExperimentConfig) -> Option<usize> {
    base.corpus.as_ref().map(|c| c.num_labels)
}

/// Maximum lengths swept by the lengths suite: quarters of the configured
/// maximum, rounded down to whole segments.
pub fn length_grid(segment_len: usize, max_doc_len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=4)
        .map(|q| (max_doc_len * q / 4 / segment_len * segment_len).max(segment_len))
        .collect();
    out.dedup();
    out
}

pub fn variants(suite: Suite, base: &ExperimentConfig) -> Vec<Variant> {
    let mut out = Vec::new();
    match suite {
        Suite::Heads => {
            for kind in HeadKind::ALL {
                let mut c = base.clone();
                c.head.kind = kind;
                out.push(variant(kind.name(), c));
            }
        }
        Suite::Pretrain => {
            out.push(variant("random-init", base.clone()));
            out.push(Variant {
                name: "mlm-pretrained".into(),
                config: base.clone(),
                pretrained: true,
            });
        }
        Suite::Lengths => {
            for len in length_grid(base.segmenter.segment_len, base.segmenter.max_doc_len) {
                let mut c = base.clone();
                c.segmenter.max_doc_len = len;
                out.push(variant(format!("max-len-{len}"), c));
            }
        }
        Suite::Truncation => {
            out.push(variant("segment-pooling", base.clone()));
            for (name, mode) in [("front-truncated", TruncateMode::Front), ("back-truncated", TruncateMode::Back)] {
                let mut c = base.clone();
                c.segmenter.truncation = Some(Truncation {
                    mode,
                    limit: c.segmenter.segment_len,
                });
                out.push(variant(name, c));
            }
        }
        Suite::TopK => {
            let mut all = base.clone();
            all.top_k_labels = None;
            out.push(variant("all-labels", all));
            let k = match corpus_labels(base) {
                Some(n) if n <= 50 => (n / 2).max(1),
                _ => 50,
            };
            let mut c = base.clone();
            c.top_k_labels = Some(k);
            out.push(variant(format!("top-{k}"), c));
        }
        Suite::Schedule => {
            let mut linear = base.clone();
            linear.train.schedule = ScheduleKind::LinearDecay;
            out.push(variant("linear-decay", linear.clone()));
            let mut constant = base.clone();
            constant.train.schedule = ScheduleKind::Constant;
            out.push(variant("constant", constant));
            // the reduced rate keeps the 2e-5 : 5e-5 ratio
            linear.train.peak_lr *= 0.4;
            out.push(variant("linear-decay-low-lr", linear));
        }
    }
    out
}

/// `ablate` command: one run directory per variant under `out`, plus
/// `comparison.{md,csv,json}`.
pub fn run_ablation(suite: Suite, base: &ExperimentConfig, data_dir: Option<&Path>, out: &Path) -> Result<Vec<Row>> {
    fs::create_dir_all(out).map_err(CliError::io(out))?;
    let mut rows = Vec::new();
    for v in variants(suite, base) {
        log::info!("{} suite: variant {}", suite.name(), v.name);
        let started = unix_now();
        let mut config = v.config;
        if let Some(dir) = data_dir {
            config.data_path = Some(dir.to_path_buf());
            config.corpus = None;
        }
        config.validate()?;
        let data = load_dataset(&config, None)?;
        let prepared = prepare(&mut config, &data)?;
        let (init, init_name) = if v.pretrained {
            (Init::Pretrained(pretrain(&config, &prepared, None)?), "mlm-pretrained")
        } else {
            (Init::Random, "random")
        };
        let run_dir = out.join(&v.name);
        fs::create_dir_all(&run_dir).map_err(CliError::io(&run_dir))?;
        let result = fit(&config, &prepared, &init, None)?;
        write_run_files(&run_dir, &config, &prepared, &result, init_name, started)?;
        rows.push(Row::new(
            &v.name,
            config.head.kind.name(),
            init_name,
            result.outcome.best_epoch,
            &result.test_report,
        ));
    }
    for (format, ext) in [(Format::Md, "md"), (Format::Csv, "csv"), (Format::Json, "json")] {
        write_atomic(&out.join(format!("comparison.{ext}")), render(&rows, format).as_bytes())?;
    }
    Ok(rows)
}
