use super::TrainError;
use crate::corpus::LabelVector;
use crate::metrics::{micro_f1, Confusion};

/// Decision threshold grid `{0.02, 0.04, …, 0.98}`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=49).map(|i| i as f64 / 50.0).collect()
}

/// Bit `i` set iff `p_i >= t`.
pub fn decide(scores: &[f64], t: f64) -> LabelVector {
    LabelVector(scores.iter().map(|&p| p >= t).collect())
}

/// Grid threshold maximizing micro-F1; ties go to the smallest threshold.
pub fn tune_threshold(gold: &[LabelVector], scores: &[Vec<f64>]) -> Result<f64, TrainError> {
    if gold.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in threshold_grid() {
        let dec: Vec<LabelVector> = scores.iter().map(|s| decide(s, t)).collect();
        let f = micro_f1(gold, &dec)?;
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}

/// Per-label grid thresholds maximizing each label's own F1. Labels without
/// dev positives keep `fallback`.
pub fn tune_per_label_thresholds(
    gold: &[LabelVector],
    scores: &[Vec<f64>],
    fallback: f64,
) -> Result<Vec<f64>, TrainError> {
    if gold.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    let n = gold[0].len();
    let grid = threshold_grid();
    let mut out = vec![fallback; n];
    for (l, slot) in out.iter_mut().enumerate() {
        if !gold.iter().any(|g| g.0[l]) {
            continue;
        }
        let mut best = (f64::NEG_INFINITY, fallback);
        for &t in &grid {
            let mut c = Confusion::default();
            for (g, s) in gold.iter().zip(scores) {
                match (g.0[l], s[l] >= t) {
                    (true, true) => c.tp += 1,
                    (false, true) => c.fp += 1,
                    (true, false) => c.fn_ += 1,
                    _ => {}
                }
            }
            if c.f1() > best.0 {
                best = (c.f1(), t);
            }
        }
        *slot = best.1;
    }
    Ok(out)
}
