//! Masked-language-model pretraining of the encoder.

use rand::Rng;

use super::{Encoder, EncoderError, EncoderState};
use crate::rng::Rng64;
use crate::tensor::{ParamGrads, Real, Tape, Var};
use crate::tokenizer::{is_special, MASK, NUM_SPECIAL};
use crate::training::{AdamW, TrainError};

pub const MLM_SELECT_RATE: f64 = 0.15;

/// A corrupted segment together with the positions the loss is computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmSelection {
    pub input: Vec<usize>,
    pub positions: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Selects each non-special, unpadded position with probability 0.15.
/// Selected tokens become `[MASK]` 80% of the time, a random ordinary
/// token 10% of the time, and stay unchanged otherwise.
pub fn mask_for_mlm(ids: &[usize], keep: &[bool], vocab_size: usize, rng: &mut Rng64) -> MlmSelection {
    let mut input = ids.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (j, &id) in ids.iter().enumerate() {
        if !keep[j] || is_special(id) || rng.random::<f64>() >= MLM_SELECT_RATE {
            continue;
        }
        positions.push(j);
        targets.push(id);
        let r: f64 = rng.random();
        if r < 0.8 {
            input[j] = MASK;
        } else if r < 0.9 {
            input[j] = rng.random_range(NUM_SPECIAL..vocab_size);
        }
    }
    MlmSelection {
        input,
        positions,
        targets,
    }
}

/// Mean cross-entropy over the selected positions of one segment.
pub fn mlm_loss<T: Real>(
    encoder: &Encoder,
    tape: &mut Tape<'_, T>,
    selection: &MlmSelection,
    keep: &[bool],
    dropout: Option<&mut Rng64>,
) -> Result<Var, EncoderError> {
    let h = encoder.forward_rows(tape, &selection.input, keep, dropout)?;
    let picked = tape.gather_rows(h, &selection.positions)?;
    let logits = encoder.mlm_logits(tape, picked)?;
    Ok(tape.softmax_xent(logits, &selection.targets)?)
}

/// One optimizer update on a batch of segments. Segments without any
/// selected position are skipped; if the whole batch is degenerate no
/// update happens and `None` is returned.
pub fn mlm_pretrain_step(
    state: &mut EncoderState<f32>,
    optimizer: &mut AdamW<f32>,
    lr: f64,
    batch: &[(Vec<usize>, Vec<bool>)],
    rng: &mut Rng64,
) -> Result<Option<f64>, TrainError> {
    let vocab = state.config().vocab_size;
    let mut grads = ParamGrads::new(state.store.len());
    let mut total = 0.0;
    let mut used = 0usize;
    for (ids, keep) in batch {
        let selection = mask_for_mlm(ids, keep, vocab, rng);
        if selection.positions.is_empty() {
            continue;
        }
        let mut tape = Tape::new(&state.store);
        let loss = mlm_loss(&state.encoder, &mut tape, &selection, keep, Some(rng))?;
        let value = tape.value(loss).get(0, 0) as f64;
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss(format!("pretraining step {}", optimizer.steps_taken() + 1)));
        }
        total += value;
        used += 1;
        grads.merge(tape.backward(loss)?);
    }
    if used == 0 {
        return Ok(None);
    }
    state.store.zero_grads();
    grads.accumulate_into(&mut state.store, 1.0 / used as f32);
    optimizer.step(&mut state.store, lr)?;
    Ok(Some(total / used as f64))
}
