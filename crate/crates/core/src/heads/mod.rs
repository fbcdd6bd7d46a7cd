//! Prediction heads over document hidden states: label-aware attention
//! (LAAT), CAML-style attention, per-segment max pooling and a CLS-mean
//! linear baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSpace, LabelVector};
use crate::rng::{stream, truncated_normal_matrix};
use crate::segmenter::{DocNodes, HiddenStates, SegmentError};
use crate::tensor::{Matrix, ParamId, ParamStore, Real, Tape, TensorError, Var};

pub const HEAD_INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("invalid head config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Laat,
    Caml,
    BertXml,
    ClsMean,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::Laat, HeadKind::Caml, HeadKind::BertXml, HeadKind::ClsMean];

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Laat => "laat",
            HeadKind::Caml => "caml",
            HeadKind::BertXml => "bert-xml",
            HeadKind::ClsMean => "cls-mean",
        }
    }

    pub fn has_attention(self) -> bool {
        !matches!(self, HeadKind::ClsMean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Projection width `d_a`; `None` means `d`.
    pub attention_dim: Option<usize>,
    /// Bias inside `tanh(VH + b_V)`.
    pub projection_bias: bool,
    /// Per-label bias inside the sigmoid.
    pub label_bias: bool,
    pub bias_init: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Laat,
            attention_dim: None,
            projection_bias: false,
            label_bias: true,
            bias_init: -2.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Params {
    /// Used by both LAAT and per-segment max pooling.
    Laat {
        v: ParamId,
        v_bias: Option<ParamId>,
        w: ParamId,
        l: ParamId,
    },
    Caml {
        /// Label embeddings stored as `|Y|×d` (i.e. `Uᵀ`).
        u: ParamId,
        beta: ParamId,
    },
    ClsMean {
        w: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct Head {
    kind: HeadKind,
    num_labels: usize,
    hidden: usize,
    params: Params,
    bias: Option<ParamId>,
}

/// Tape output of a head: `|Y|×1` logits plus the attention nodes (one
/// per attention span; empty for CLS-mean).
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub logits: Var,
    pub attention: Vec<Var>,
}

/// Label probabilities with the attention maps that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// `|Y|×n` row-stochastic maps: one for LAAT/CAML, one per segment for
    /// per-segment max pooling, none for CLS-mean.
    pub attention: Vec<Matrix<f64>>,
}

impl Head {
    pub fn register<T: Real>(
        config: &HeadConfig,
        hidden: usize,
        num_labels: usize,
        store: &mut ParamStore<T>,
    ) -> Result<Self, HeadError> {
        if hidden == 0 || num_labels == 0 {
            return Err(HeadError::Config("hidden size and label count must be positive".into()));
        }
        let da = config.attention_dim.unwrap_or(hidden);
        if da == 0 {
            return Err(HeadError::Config("attention_dim must be positive".into()));
        }
        let mut rng = stream(config.seed, 0x4EAD, 0);
        let mut w = |store: &mut ParamStore<T>, name: &str, r: usize, c: usize| {
            store.register(name, truncated_normal_matrix(&mut rng, r, c, HEAD_INIT_STD), true)
        };
        let params = match config.kind {
            HeadKind::Laat | HeadKind::BertXml => Params::Laat {
                v: w(store, "head.v", da, hidden),
                v_bias: config
                    .projection_bias
                    .then(|| store.register("head.v_bias", Matrix::zeros(1, da), false)),
                w: w(store, "head.w", num_labels, da),
                l: w(store, "head.l", num_labels, hidden),
            },
            HeadKind::Caml => Params::Caml {
                u: w(store, "head.u", num_labels, hidden),
                beta: w(store, "head.beta", num_labels, hidden),
            },
            HeadKind::ClsMean => Params::ClsMean {
                w: w(store, "head.w", num_labels, hidden),
            },
        };
        let bias = config.label_bias.then(|| {
            store.register("head.bias", Matrix::filled(num_labels, 1, T::of(config.bias_init)), false)
        });
        Ok(Self {
            kind: config.kind,
            num_labels,
            hidden,
            params,
            bias,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Handles in registration order: the projection/attention matrices,
    /// then the output vectors, then the label bias.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = match &self.params {
            Params::Laat { v, v_bias, w, l } => {
                let mut ids = vec![*v];
                ids.extend(*v_bias);
                ids.extend([*w, *l]);
                ids
            }
            Params::Caml { u, beta } => vec![*u, *beta],
            Params::ClsMean { w } => vec![*w],
        };
        ids.extend(self.bias);
        ids
    }

    fn with_bias<T: Real>(&self, tape: &mut Tape<'_, T>, logits: Var) -> Result<Var, HeadError> {
        Ok(match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_col(logits, b)?
            }
            None => logits,
        })
    }

    /// Attention over rows of `h` (`n×d`): returns `(A, logits)` with
    /// `A: |Y|×n` and logits `|Y|×1` before the label bias.
    fn attend<T: Real>(&self, tape: &mut Tape<'_, T>, h: Var) -> Result<(Var, Var), HeadError> {
        let (_, d) = tape.shape(h);
        if d != self.hidden {
            return Err(TensorError::Shape {
                op: "head",
                left: (self.hidden, 1),
                right: (d, tape.shape(h).0),
            }
            .into());
        }
        match &self.params {
            Params::Laat { v, v_bias, w, l } => {
                let v = tape.param(*v);
                let mut z = tape.matmul_nt(h, v)?;
                if let Some(b) = v_bias {
                    let b = tape.param(*b);
                    z = tape.add_row(z, b)?;
                }
                let z = tape.tanh(z);
                let w = tape.param(*w);
                let s = tape.matmul_nt(w, z)?;
                let a = tape.softmax_rows(s);
                let dm = tape.matmul(a, h)?;
                let l = tape.param(*l);
                Ok((a, tape.row_dot(dm, l)?))
            }
            Params::Caml { u, beta } => {
                let u = tape.param(*u);
                let s = tape.matmul_nt(u, h)?;
                let a = tape.softmax_rows(s);
                let dm = tape.matmul(a, h)?;
                let beta = tape.param(*beta);
                Ok((a, tape.row_dot(dm, beta)?))
            }
            Params::ClsMean { .. } => Err(HeadError::Config("CLS-mean head has no attention".into())),
        }
    }

    /// Builds the head on `tape` over document nodes.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, doc: &DocNodes) -> Result<HeadOutput, HeadError> {
        match (self.kind, &self.params) {
            (HeadKind::Laat | HeadKind::Caml, _) => {
                let (a, logits) = self.attend(tape, doc.h)?;
                Ok(HeadOutput {
                    logits: self.with_bias(tape, logits)?,
                    attention: vec![a],
                })
            }
            (HeadKind::BertXml, _) => {
                if doc.spans.is_empty() {
                    return Err(HeadError::Config("per-segment pooling needs at least one segment".into()));
                }
                let mut attention = Vec::with_capacity(doc.spans.len());
                let mut per_segment = Vec::with_capacity(doc.spans.len());
                for span in &doc.spans {
                    let hs = if doc.spans.len() == 1 {
                        doc.h
                    } else {
                        tape.slice_rows(doc.h, span.start, span.len())?
                    };
                    let (a, logits) = self.attend(tape, hs)?;
                    attention.push(a);
                    per_segment.push(self.with_bias(tape, logits)?);
                }
                // Sigmoid is monotone, so the max over logits selects the
                // same segment as the max over probabilities.
                let logits = if per_segment.len() == 1 {
                    per_segment[0]
                } else {
                    tape.max_of(&per_segment)?
                };
                Ok(HeadOutput { logits, attention })
            }
            (HeadKind::ClsMean, Params::ClsMean { w }) => {
                if doc.cls.is_empty() {
                    return Err(HeadError::Config("CLS-mean head needs at least one segment".into()));
                }
                let stacked = if doc.cls.len() == 1 {
                    doc.cls[0]
                } else {
                    tape.concat_rows(&doc.cls)?
                };
                let mean = tape.mean_rows(stacked)?;
                let w = tape.param(*w);
                let logits = tape.matmul_nt(w, mean)?;
                Ok(HeadOutput {
                    logits: self.with_bias(tape, logits)?,
                    attention: Vec::new(),
                })
            }
            (HeadKind::ClsMean, _) => unreachable!("CLS-mean head always owns a linear layer"),
        }
    }

    /// Forward pass over fixed hidden states (no encoder gradients).
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, hidden: &HiddenStates<T>) -> Result<Prediction, HeadError> {
        let mut tape = Tape::new(store);
        let nodes = hidden.to_nodes(&mut tape)?;
        let out = self.forward(&mut tape, &nodes)?;
        Ok(prediction_from(&tape, &out))
    }
}

/// Reads probabilities and attention maps off a finished tape.
pub fn prediction_from<T: Real>(tape: &Tape<'_, T>, out: &HeadOutput) -> Prediction {
    Prediction {
        probs: tape
            .value(out.logits)
            .as_slice()
            .iter()
            .map(|&z| sigmoid(z.as_f64()))
            .collect(),
        attention: out.attention.iter().map(|&a| tape.value(a).cast()).collect(),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bit `i` is set iff `p_i ≥ t`.
pub fn decide(prediction: &Prediction, t: f64) -> LabelVector {
    LabelVector(prediction.probs.iter().map(|&p| p >= t).collect())
}

/// Top-`k` attended document positions per label, for inspection.
/// Columns without a document position (CLS/SEP) are reported as `None`.
pub fn attention_dump(
    attention: &Matrix<f64>,
    positions: &[Option<usize>],
    labels: &LabelSpace,
    k: usize,
) -> BTreeMap<String, Vec<(Option<usize>, f64)>> {
    let mut out = BTreeMap::new();
    for i in 0..attention.rows().min(labels.len()) {
        let row = attention.row(i);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        out.insert(
            labels.code(i).to_string(),
            idx.into_iter()
                .take(k)
                .map(|j| (positions.get(j).copied().flatten(), row[j]))
                .collect(),
        );
    }
    out
}
