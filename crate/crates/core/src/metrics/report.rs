use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{
    macro_auc, macro_f1, micro_auc, micro_f1, per_label_confusion, precision_at_k,
    stratified_report, EvalBatch, HeadTail, Result,
};
use crate::corpus::LabelSpace;

/// Where the decision threshold came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdSource {
    DevTuned,
    PerLabel,
    Override,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub code: String,
    pub train_frequency: usize,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Every evaluation number for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub documents: usize,
    pub labels: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_auc: Option<f64>,
    pub macro_auc_skipped_labels: usize,
    pub micro_auc: Option<f64>,
    pub p_at_5: f64,
    pub p_at_8: f64,
    pub p_at_15: f64,
    pub threshold: f64,
    pub threshold_source: ThresholdSource,
    pub head_tail: HeadTail,
    pub per_label: Vec<LabelRow>,
}

/// Share of labels counted as "head" in the stratified breakdown.
pub const HEAD_FRACTION: f64 = 0.1;

pub fn evaluate(
    batch: &EvalBatch,
    threshold: f64,
    source: ThresholdSource,
    labels: &LabelSpace,
) -> Result<MetricsReport> {
    let (gold, scores, dec) = (&batch.gold, &batch.scores, &batch.decisions);
    let per = per_label_confusion(gold, dec)?;
    let auc_macro = macro_auc(gold, scores)?;
    let per_label = per
        .iter()
        .enumerate()
        .map(|(l, c)| LabelRow {
            code: labels.code(l).to_string(),
            train_frequency: labels.train_frequency()[l],
            support: c.tp + c.fn_,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
        .collect();
    Ok(MetricsReport {
        documents: gold.len(),
        labels: batch.num_labels(),
        macro_f1: macro_f1(gold, dec)?,
        micro_f1: micro_f1(gold, dec)?,
        macro_auc: auc_macro.value,
        macro_auc_skipped_labels: auc_macro.skipped,
        micro_auc: micro_auc(gold, scores).ok(),
        p_at_5: precision_at_k(gold, scores, 5)?,
        p_at_8: precision_at_k(gold, scores, 8)?,
        p_at_15: precision_at_k(gold, scores, 15)?,
        threshold,
        threshold_source: source,
        head_tail: stratified_report(gold, dec, labels.train_frequency(), HEAD_FRACTION)?,
        per_label,
    })
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v))
}

impl MetricsReport {
    /// Aligned plain-text summary, percentages like the usual result tables.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let src = match self.threshold_source {
            ThresholdSource::DevTuned => "dev-tuned",
            ThresholdSource::PerLabel => "per-label",
            ThresholdSource::Override => "override",
        };
        let _ = writeln!(
            s,
            "documents={} labels={} threshold={:.2} ({src})",
            self.documents, self.labels, self.threshold
        );
        let header = [
            "Macro-AUC", "Micro-AUC", "Macro-F1", "Micro-F1", "P@5", "P@8", "P@15",
        ];
        let values = [
            pct(self.macro_auc),
            pct(self.micro_auc),
            pct(Some(self.macro_f1)),
            pct(Some(self.micro_f1)),
            pct(Some(self.p_at_5)),
            pct(Some(self.p_at_8)),
            pct(Some(self.p_at_15)),
        ];
        for h in header {
            let _ = write!(s, "{h:>10}");
        }
        s.push('\n');
        for v in &values {
            let _ = write!(s, "{v:>10}");
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "head micro-F1 {} over {} labels, tail micro-F1 {} over {} labels; macro-AUC skipped {} labels",
            pct(Some(self.head_tail.head_micro_f1)),
            self.head_tail.head_labels,
            pct(Some(self.head_tail.tail_micro_f1)),
            self.head_tail.tail_labels,
            self.macro_auc_skipped_labels
        );
        s
    }
}
