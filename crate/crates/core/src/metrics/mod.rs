//! Multi-label evaluation: micro/macro F1, micro/macro ROC-AUC,
//! precision@K and head/tail breakdowns.
//!
//! Conventions: a per-label F1 whose denominator is zero counts as 0 and
//! still enters the macro average; macro AUC skips labels lacking either
//! class and reports how many were skipped; P@K breaks score ties by the
//! lower label id.

mod report;

pub use report::{evaluate, LabelRow, MetricsReport, ThresholdSource};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LabelVector;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty evaluation batch")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("AUC undefined: {0}")]
    Undefined(&'static str),
    #[error("k must be >= 1")]
    ZeroK,
}

type Result<T> = std::result::Result<T, MetricsError>;

/// Gold sets, scores and thresholded decisions for one evaluation.
#[derive(Clone, Debug)]
pub struct EvalBatch {
    pub gold: Vec<LabelVector>,
    pub scores: Vec<Vec<f64>>,
    pub decisions: Vec<LabelVector>,
}

impl EvalBatch {
    pub fn new(gold: Vec<LabelVector>, scores: Vec<Vec<f64>>, threshold: f64) -> Result<Self> {
        check_scores(&gold, &scores)?;
        let decisions = scores
            .iter()
            .map(|s| LabelVector(s.iter().map(|&p| p >= threshold).collect()))
            .collect();
        Ok(Self {
            gold,
            scores,
            decisions,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.gold.first().map_or(0, LabelVector::len)
    }
}

fn check_pairs(gold: &[LabelVector], other: &[LabelVector]) -> Result<usize> {
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    if gold.len() != other.len() {
        return Err(MetricsError::Shape(format!(
            "{} gold rows vs {} prediction rows",
            gold.len(),
            other.len()
        )));
    }
    let n = gold[0].len();
    for (i, (g, o)) in gold.iter().zip(other).enumerate() {
        if g.len() != n || o.len() != n {
            return Err(MetricsError::Shape(format!(
                "row {i}: expected {n} labels, got {} / {}",
                g.len(),
                o.len()
            )));
        }
    }
    Ok(n)
}

fn check_scores(gold: &[LabelVector], scores: &[Vec<f64>]) -> Result<usize> {
    if gold.is_empty() {
        return Err(MetricsError::Empty);
    }
    if gold.len() != scores.len() {
        return Err(MetricsError::Shape(format!(
            "{} gold rows vs {} score rows",
            gold.len(),
            scores.len()
        )));
    }
    let n = gold[0].len();
    for (i, (g, s)) in gold.iter().zip(scores).enumerate() {
        if g.len() != n || s.len() != n {
            return Err(MetricsError::Shape(format!(
                "row {i}: expected {n} labels, got {} / {}",
                g.len(),
                s.len()
            )));
        }
    }
    Ok(n)
}

/// True/false positive and false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    #[inline]
    fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn precision(&self) -> f64 {
        let d = self.tp + self.fp;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let d = self.tp + self.fn_;
        if d == 0 {
            0.0
        } else {
            self.tp as f64 / d as f64
        }
    }
}

/// Per-label confusion counts.
pub fn per_label_confusion(gold: &[LabelVector], decisions: &[LabelVector]) -> Result<Vec<Confusion>> {
    let n = check_pairs(gold, decisions)?;
    let mut out = vec![Confusion::default(); n];
    for (g, d) in gold.iter().zip(decisions) {
        for (c, (&gb, &db)) in out.iter_mut().zip(g.0.iter().zip(&d.0)) {
            c.add(gb, db);
        }
    }
    Ok(out)
}

pub fn micro_f1(gold: &[LabelVector], decisions: &[LabelVector]) -> Result<f64> {
    check_pairs(gold, decisions)?;
    let mut c = Confusion::default();
    for (g, d) in gold.iter().zip(decisions) {
        for (&gb, &db) in g.0.iter().zip(&d.0) {
            c.add(gb, db);
        }
    }
    Ok(c.f1())
}

pub fn macro_f1(gold: &[LabelVector], decisions: &[LabelVector]) -> Result<f64> {
    let per = per_label_confusion(gold, decisions)?;
    if per.is_empty() {
        return Ok(0.0);
    }
    Ok(per.iter().map(Confusion::f1).sum::<f64>() / per.len() as f64)
}

/// Mann–Whitney AUC with midranks; `None` when either class is absent.
pub fn auc_from_pairs(mut cells: Vec<(f64, bool)>) -> Option<f64> {
    let n_pos = cells.iter().filter(|c| c.1).count();
    let n_neg = cells.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        while j + 1 < cells.len() && cells[j + 1].0 == cells[i].0 {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        let pos_in_group = cells[i..=j].iter().filter(|c| c.1).count();
        rank_sum_pos += mid * pos_in_group as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// ROC-AUC over all (document, label) cells pooled.
pub fn micro_auc(gold: &[LabelVector], scores: &[Vec<f64>]) -> Result<f64> {
    check_scores(gold, scores)?;
    let cells: Vec<(f64, bool)> = gold
        .iter()
        .zip(scores)
        .flat_map(|(g, s)| s.iter().copied().zip(g.0.iter().copied()))
        .collect();
    auc_from_pairs(cells).ok_or(MetricsError::Undefined(
        "micro AUC needs both positive and negative cells",
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    /// Mean over labels with both classes present; `None` if there are none.
    pub value: Option<f64>,
    pub skipped: usize,
}

pub fn macro_auc(gold: &[LabelVector], scores: &[Vec<f64>]) -> Result<MacroAuc> {
    let n = check_scores(gold, scores)?;
    let mut total = 0.0;
    let mut used = 0usize;
    for l in 0..n {
        let cells = gold.iter().zip(scores).map(|(g, s)| (s[l], g.0[l])).collect();
        if let Some(a) = auc_from_pairs(cells) {
            total += a;
            used += 1;
        }
    }
    Ok(MacroAuc {
        value: (used > 0).then(|| total / used as f64),
        skipped: n - used,
    })
}

/// Label ids of the `k` highest scores, ties broken by lower id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

/// Mean over documents of hits among the top `k` labels divided by `k`.
pub fn precision_at_k(gold: &[LabelVector], scores: &[Vec<f64>], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    check_scores(gold, scores)?;
    let total: f64 = gold
        .iter()
        .zip(scores)
        .map(|(g, s)| top_k(s, k).into_iter().filter(|&l| g.0[l]).count() as f64 / k as f64)
        .sum();
    Ok(total / gold.len() as f64)
}

/// Micro-F1 restricted to frequent ("head") and remaining ("tail") labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTail {
    pub head_labels: usize,
    pub tail_labels: usize,
    pub head_micro_f1: f64,
    pub tail_micro_f1: f64,
}

/// Head = the top `head_fraction` of labels by training frequency (at least
/// one label), ties broken by lower id.
pub fn stratified_report(
    gold: &[LabelVector],
    decisions: &[LabelVector],
    train_frequency: &[usize],
    head_fraction: f64,
) -> Result<HeadTail> {
    let n = check_pairs(gold, decisions)?;
    if train_frequency.len() != n {
        return Err(MetricsError::Shape(format!(
            "{} frequencies for {n} labels",
            train_frequency.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| train_frequency[b].cmp(&train_frequency[a]).then(a.cmp(&b)));
    let n_head = ((n as f64 * head_fraction).ceil() as usize).clamp(1.min(n), n);
    let mut is_head = vec![false; n];
    for &l in &order[..n_head] {
        is_head[l] = true;
    }
    let (mut head, mut tail) = (Confusion::default(), Confusion::default());
    for (g, d) in gold.iter().zip(decisions) {
        for l in 0..n {
            if is_head[l] {
                head.add(g.0[l], d.0[l]);
            } else {
                tail.add(g.0[l], d.0[l]);
            }
        }
    }
    Ok(HeadTail {
        head_labels: n_head,
        tail_labels: n - n_head,
        head_micro_f1: head.f1(),
        tail_micro_f1: tail.f1(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn micro_f1_hand_counts() {
        let gold = [lv(&[1, 0, 1]), lv(&[0, 1, 0])];
        let dec = [lv(&[1, 1, 0]), lv(&[0, 1, 0])];
        assert!((micro_f1(&gold, &dec).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(micro_f1(&gold, &gold).unwrap(), 1.0);
        let none = [lv(&[0, 0, 0]), lv(&[0, 0, 0])];
        assert_eq!(micro_f1(&gold, &none).unwrap(), 0.0);
    }

    #[test]
    fn macro_f1_counts_zero_support_labels() {
        let gold = [lv(&[1, 0])];
        assert_eq!(macro_f1(&gold, &gold).unwrap(), 0.5);
        let gold = [lv(&[1, 0]), lv(&[0, 1])];
        assert_eq!(macro_f1(&gold, &gold).unwrap(), 1.0);
    }

    #[test]
    fn auc_edge_cases() {
        let gold = [lv(&[1, 0])];
        assert_eq!(micro_auc(&gold, &[vec![0.9, 0.1]]).unwrap(), 1.0);
        assert_eq!(micro_auc(&gold, &[vec![0.3, 0.3]]).unwrap(), 0.5);
        assert!(micro_auc(&[lv(&[1, 1])], &[vec![0.1, 0.2]]).is_err());
        let m = macro_auc(&[lv(&[1, 0]), lv(&[0, 0])], &[vec![0.9, 0.2], vec![0.1, 0.4]]).unwrap();
        assert_eq!(m.value, Some(1.0));
        assert_eq!(m.skipped, 1);
    }

    #[test]
    fn precision_at_k_conventions() {
        let mut g = vec![0u8; 10];
        g[3] = 1;
        let scores = vec![(0..10).map(|i| if i == 3 { 0.9 } else { 0.1 }).collect::<Vec<_>>()];
        assert!((precision_at_k(&[lv(&g)], &scores, 5).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(precision_at_k(&[lv(&[0; 10])], &scores, 5).unwrap(), 0.0);
        assert!(precision_at_k(&[lv(&g)], &scores, 0).is_err());
        // fewer labels than k
        assert!((precision_at_k(&[lv(&[1, 1])], &[vec![0.5, 0.5]], 5).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        assert!(micro_f1(&[lv(&[1, 0])], &[lv(&[1])]).is_err());
        assert!(matches!(micro_f1(&[], &[]), Err(MetricsError::Empty)));
    }

    #[test]
    fn head_tail_split() {
        let gold = [lv(&[1, 1, 0]), lv(&[1, 0, 1])];
        let dec = [lv(&[1, 0, 0]), lv(&[1, 0, 0])];
        let r = stratified_report(&gold, &dec, &[10, 3, 1], 0.1).unwrap();
        assert_eq!(r.head_labels, 1);
        assert_eq!(r.head_micro_f1, 1.0);
        assert_eq!(r.tail_micro_f1, 0.0);
    }
}
