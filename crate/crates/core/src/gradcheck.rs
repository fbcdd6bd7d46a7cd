//! Central finite-difference gradient checking in 64-bit precision.

use crate::tensor::{ParamId, ParamStore, Result, Tape, Var};

/// Finite-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`
    Central,
    /// Five-point central stencil, fourth-order accurate.
    FivePoint,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub entries_checked: usize,
}

/// Relative error with the denominator floored at `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of the scalar built by `loss` against finite
/// differences for every entry of the selected parameters (all when
/// `only` is `None`).
pub fn check_gradients<F>(
    store: &ParamStore<f64>,
    only: Option<&[ParamId]>,
    step: f64,
    stencil: Stencil,
    floor: f64,
    loss: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new(s);
        let l = loss(&mut tape)?;
        Ok(tape.value(l).get(0, 0))
    };

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.iter().map(|(id, _)| id).collect(),
    };
    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for id in ids {
        let n = work.value(id).len();
        for e in 0..n {
            let orig = work.value(id).as_slice()[e];
            let mut at = |delta: f64| -> Result<f64> {
                work.get_mut(id).value.as_mut_slice()[e] = orig + delta;
                let v = eval(&work);
                work.get_mut(id).value.as_mut_slice()[e] = orig;
                v
            };
            let numeric = match stencil {
                Stencil::Central => (at(step)? - at(-step)?) / (2.0 * step),
                Stencil::FivePoint => {
                    let (p1, m1) = (at(step)?, at(-step)?);
                    let (p2, m2) = (at(2.0 * step)?, at(-2.0 * step)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step)
                }
            };
            let a = analytic.get(id).map_or(0.0, |g| g.as_slice()[e]);
            let err = relative_error(a, numeric, floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                if err >= report.max_rel_error {
                    report.worst_param = Some(store.get(id).name.clone());
                    report.worst_index = e;
                }
            }
        }
    }
    Ok(report)
}

/// Checks every parameter of `model` on the BCE loss of one document,
/// with dropout disabled, using the five-point stencil.
pub fn check_model_gradients(
    model: &crate::training::Model<f64>,
    tokens: &[usize],
    gold: &[bool],
    step: f64,
    floor: f64,
) -> std::result::Result<GradCheckReport, crate::training::TrainError> {
    let targets: Vec<f64> = gold.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
    let report = check_gradients(&model.store, None, step, Stencil::FivePoint, floor, |tape| {
        let out = model
            .forward(tape, tokens, None)
            .map_err(|e| crate::tensor::TensorError::Contract(e.to_string()))?;
        tape.sigmoid_bce(out.logits, &targets)
    })?;
    Ok(report)
}
