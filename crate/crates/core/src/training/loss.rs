use super::TrainError;
use crate::corpus::LabelVector;
use crate::tensor::PROB_CLAMP;

/// Binary cross-entropy averaged over all labels, with probabilities
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(gold: &LabelVector, probs: &[f64]) -> Result<f64, TrainError> {
    if gold.len() != probs.len() {
        return Err(TrainError::LengthMismatch {
            gold: gold.len(),
            predicted: probs.len(),
        });
    }
    let n = probs.len().max(1) as f64;
    let total: f64 = gold
        .0
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / n)
}

/// Mean of [`bce_loss`] over a batch.
pub fn bce_batch(gold: &[LabelVector], probs: &[Vec<f64>]) -> Result<f64, TrainError> {
    if gold.is_empty() || gold.len() != probs.len() {
        return Err(TrainError::LengthMismatch {
            gold: gold.len(),
            predicted: probs.len(),
        });
    }
    let mut total = 0.0;
    for (g, p) in gold.iter().zip(probs) {
        total += bce_loss(g, p)?;
    }
    Ok(total / gold.len() as f64)
}
