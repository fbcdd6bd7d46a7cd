use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tune_per_label_thresholds, tune_threshold, AdamW, AdamWConfig, EncodedDoc, Model, TrainConfig, TrainError};
use crate::corpus::{LabelSpace, LabelVector};
use crate::metrics::{evaluate, EvalBatch, MetricsReport, ThresholdSource};
use crate::rng::stream;
use crate::tensor::ParamGrads;

const SHUFFLE_STREAM: u64 = 0x5417;
const DROPOUT_STREAM: u64 = 0xD409;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum Thresholds {
    Global(f64),
    PerLabel(Vec<f64>),
}

impl Thresholds {
    pub fn decide(&self, scores: &[f64]) -> LabelVector {
        match self {
            Thresholds::Global(t) => LabelVector(scores.iter().map(|&p| p >= *t).collect()),
            Thresholds::PerLabel(ts) => LabelVector(scores.iter().zip(ts).map(|(&p, &t)| p >= t).collect()),
        }
    }

    pub fn source(&self) -> ThresholdSource {
        match self {
            Thresholds::Global(_) => ThresholdSource::DevTuned,
            Thresholds::PerLabel(_) => ThresholdSource::PerLabel,
        }
    }

    /// The global value, or the mean of the per-label values.
    pub fn nominal(&self) -> f64 {
        match self {
            Thresholds::Global(t) => *t,
            Thresholds::PerLabel(ts) => ts.iter().sum::<f64>() / ts.len().max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_micro_f1: f64,
    pub dev_macro_f1: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub thresholds: Thresholds,
    pub history: Vec<EpochRecord>,
    /// Dev report of the retained epoch.
    pub dev_report: MetricsReport,
    pub steps: u64,
}

/// Probabilities for every document (no dropout), in input order.
pub fn predict_docs(model: &Model<f32>, docs: &[EncodedDoc]) -> Result<Vec<Vec<f64>>, TrainError> {
    docs.par_iter()
        .map(|d| model.predict(&d.tokens).map(|p| p.probs))
        .collect()
}

pub fn evaluate_docs(
    docs: &[EncodedDoc],
    scores: Vec<Vec<f64>>,
    thresholds: &Thresholds,
    source: ThresholdSource,
    labels: &LabelSpace,
) -> Result<MetricsReport, TrainError> {
    let gold: Vec<LabelVector> = docs.iter().map(|d| d.gold.clone()).collect();
    let mut batch = EvalBatch::new(gold, scores, thresholds.nominal())?;
    batch.decisions = batch.scores.iter().map(|s| thresholds.decide(s)).collect();
    Ok(evaluate(&batch, thresholds.nominal(), source, labels)?)
}

fn tune(config: &TrainConfig, dev: &[EncodedDoc], scores: &[Vec<f64>]) -> Result<Thresholds, TrainError> {
    let gold: Vec<LabelVector> = dev.iter().map(|d| d.gold.clone()).collect();
    let global = tune_threshold(&gold, scores)?;
    Ok(if config.per_label_thresholds {
        Thresholds::PerLabel(tune_per_label_thresholds(&gold, scores, global)?)
    } else {
        Thresholds::Global(global)
    })
}

/// Fine-tunes `model` in place and leaves it at the epoch with the best
/// dev micro-F1 (at that epoch's tuned threshold).
///
/// Update `k` (0-based) uses `lr_at(k + 1)`. Per-document gradients are
/// computed in parallel but summed in batch order, so results do not depend
/// on the thread count. Each step appends `{step, lr, loss}` to `log` and
/// each epoch an `{epoch, …}` record.
pub fn train(
    model: &mut Model<f32>,
    train_docs: &[EncodedDoc],
    dev: &[EncodedDoc],
    labels: &LabelSpace,
    config: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let per_epoch = train_docs.len().div_ceil(config.batch_size) as u64;
    let total = per_epoch * config.epochs as u64;
    if config.warmup_steps > total {
        return Err(TrainError::Config(format!(
            "warmup_steps {} exceeds the {total} total steps",
            config.warmup_steps
        )));
    }
    let schedule = config.schedule(total);
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..Default::default()
        },
    );
    let dropout_on = model.config.encoder.dropout > 0.0;
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<crate::tensor::Matrix<f32>>, Thresholds, MetricsReport)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut stream(config.seed, SHUFFLE_STREAM, epoch as u64));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let base = step * config.batch_size as u64;
            let results: Vec<Result<(f64, ParamGrads<f32>), TrainError>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = stream(config.seed, DROPOUT_STREAM, base + j as u64);
                    model.loss_and_grads(&train_docs[i], dropout_on.then_some(&mut rng))
                })
                .collect();
            let mut grads = ParamGrads::new(model.store.len());
            let mut loss = 0.0;
            for r in results {
                let (l, g) = r.map_err(|e| match e {
                    TrainError::NonFiniteLoss(ctx) => {
                        TrainError::NonFiniteLoss(format!("step {} ({ctx})", step + 1))
                    }
                    e => e,
                })?;
                loss += l;
                grads.merge(g);
            }
            let n = batch.len() as f64;
            loss /= n;
            model.store.zero_grads();
            grads.accumulate_into(&mut model.store, (1.0 / n) as f32);
            let lr = schedule.lr_at(step + 1);
            opt.step(&mut model.store, lr)?;
            step += 1;
            epoch_loss += loss * n;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::json!({"step": step, "lr": lr, "loss": loss}))?;
            }
        }

        let scores = predict_docs(model, dev)?;
        let thresholds = tune(config, dev, &scores)?;
        let report = evaluate_docs(dev, scores, &thresholds, thresholds.source(), labels)?;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_docs.len() as f64,
            dev_micro_f1: report.micro_f1,
            dev_macro_f1: report.macro_f1,
            threshold: thresholds.nominal(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, dev micro-F1 {:.4} at t={:.2}",
            record.train_loss,
            record.dev_micro_f1,
            record.threshold
        );
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::json!({"epoch": epoch, "train_loss": record.train_loss, "dev": report}))?;
        }
        if best.as_ref().is_none_or(|b| report.micro_f1 > b.0) {
            best = Some((report.micro_f1, epoch, model.store.snapshot(), thresholds, report));
        }
        history.push(record);
    }

    let (_, best_epoch, values, thresholds, dev_report) = best.expect("at least one epoch");
    model.store.restore(&values)?;
    Ok(TrainOutcome {
        best_epoch,
        thresholds,
        history,
        dev_report,
        steps: step,
    })
}
