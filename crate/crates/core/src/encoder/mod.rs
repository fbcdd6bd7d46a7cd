//! Miniature post-norm transformer encoder with learned absolute positions
//! and a weight-tied masked-language-model head.

mod checkpoint;
mod mlm;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointEntry, CHECKPOINT_FORMAT};
pub use mlm::{mask_for_mlm, mlm_loss, mlm_pretrain_step, MlmSelection, MLM_SELECT_RATE};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, truncated_normal_matrix, Rng64};
use crate::tensor::{Matrix, ParamId, ParamStore, Real, Tape, TensorError, Var};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("segment of length {len} exceeds the {max} encoder positions")]
    Length { len: usize, max: usize },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("checkpoint mismatch in {what}: checkpoint has {found}, expected {expected}")]
    Mismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub ffn: usize,
    /// Rows of the positional table; also the hard cap on segment length
    /// including CLS and SEP.
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 128,
            ffn: 512,
            max_positions: 130,
            vocab_size: 8192,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(EncoderError::Config(format!(
                "hidden {} must be divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.max_positions < 8 {
            return Err(EncoderError::Config(format!(
                "max_positions {} must be at least 8",
                self.max_positions
            )));
        }
        if self.layers == 0 || self.ffn == 0 || self.vocab_size <= crate::tokenizer::NUM_SPECIAL {
            return Err(EncoderError::Config(
                "layers, ffn and vocab_size must be positive (vocab beyond the specials)".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::Config(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// Parameter handles of an encoder living inside some [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<Layer>,
    mlm_bias: ParamId,
}

/// Per-forward dropout: `None` disables it.
pub type Dropout<'a> = Option<&'a mut Rng64>;

impl Encoder {
    /// Registers freshly initialized encoder parameters (truncated normal,
    /// σ = 0.02; zero biases; unit norm gains).
    pub fn register<T: Real>(
        config: &EncoderConfig,
        store: &mut ParamStore<T>,
    ) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = stream(config.seed, 0xE4C0, 0);
        let d = config.hidden;
        let mut w = |store: &mut ParamStore<T>, name: String, r: usize, c: usize| {
            store.register(name, truncated_normal_matrix(&mut rng, r, c, INIT_STD), true)
        };
        let zeros = |store: &mut ParamStore<T>, name: String, c: usize| {
            store.register(name, Matrix::zeros(1, c), false)
        };
        let ones = |store: &mut ParamStore<T>, name: String, c: usize| {
            store.register(name, Matrix::filled(1, c, T::one()), false)
        };
        let tok_emb = w(store, "encoder.tok_emb".into(), config.vocab_size, d);
        let pos_emb = w(store, "encoder.pos_emb".into(), config.max_positions, d);
        let emb_ln_g = ones(store, "encoder.emb_ln.gain".into(), d);
        let emb_ln_b = zeros(store, "encoder.emb_ln.bias".into(), d);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |s: &str| format!("encoder.layer{l}.{s}");
            layers.push(Layer {
                wq: w(store, p("attn.wq"), d, d),
                bq: zeros(store, p("attn.bq"), d),
                wk: w(store, p("attn.wk"), d, d),
                bk: zeros(store, p("attn.bk"), d),
                wv: w(store, p("attn.wv"), d, d),
                bv: zeros(store, p("attn.bv"), d),
                wo: w(store, p("attn.wo"), d, d),
                bo: zeros(store, p("attn.bo"), d),
                ln1_g: ones(store, p("ln1.gain"), d),
                ln1_b: zeros(store, p("ln1.bias"), d),
                w1: w(store, p("ffn.w1"), d, config.ffn),
                b1: zeros(store, p("ffn.b1"), config.ffn),
                w2: w(store, p("ffn.w2"), config.ffn, d),
                b2: zeros(store, p("ffn.b2"), d),
                ln2_g: ones(store, p("ln2.gain"), d),
                ln2_b: zeros(store, p("ln2.bias"), d),
            });
        }
        let mlm_bias = zeros(store, "encoder.mlm.bias".into(), config.vocab_size);
        Ok(Self {
            config: config.clone(),
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            mlm_bias,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn token_embedding(&self) -> ParamId {
        self.tok_emb
    }

    /// Names of every parameter this encoder owns, registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok_emb, self.pos_emb, self.emb_ln_g, self.emb_ln_b];
        for l in &self.layers {
            ids.extend([
                l.wq, l.bq, l.wk, l.bk, l.wv, l.bv, l.wo, l.bo, l.ln1_g, l.ln1_b, l.w1, l.b1,
                l.w2, l.b2, l.ln2_g, l.ln2_b,
            ]);
        }
        ids.push(self.mlm_bias);
        ids
    }

    fn dropout<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, rng: &mut Dropout<'_>) -> Result<Var, EncoderError> {
        let Some(rng) = rng.as_deref_mut() else {
            return Ok(x);
        };
        let p = self.config.dropout;
        if p == 0.0 {
            return Ok(x);
        }
        let (r, c) = tape.shape(x);
        let keep = T::of(1.0 / (1.0 - p));
        let mask = Matrix::from_fn(r, c, |_, _| {
            if rng.random::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        });
        Ok(tape.mul_const(x, mask)?)
    }

    fn linear<T: Real>(tape: &mut Tape<'_, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var, EncoderError> {
        let w = tape.param(w);
        let b = tape.param(b);
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }

    /// Token-major forward pass: returns a `len×d` node, one row per
    /// position. `keep[j] == false` marks PAD positions, which receive no
    /// attention from any query.
    pub fn forward_rows<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        ids: &[usize],
        keep: &[bool],
        mut dropout: Dropout<'_>,
    ) -> Result<Var, EncoderError> {
        let len = ids.len();
        if len > self.config.max_positions {
            return Err(EncoderError::Length {
                len,
                max: self.config.max_positions,
            });
        }
        if keep.len() != len {
            return Err(TensorError::Shape {
                op: "encode_segment",
                left: (len, 1),
                right: (keep.len(), 1),
            }
            .into());
        }
        let d = self.config.hidden;
        let heads = self.config.heads;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());

        let tok = tape.param(self.tok_emb);
        let pos = tape.param(self.pos_emb);
        let te = tape.embedding(tok, ids)?;
        let positions: Vec<usize> = (0..len).collect();
        let pe = tape.embedding(pos, &positions)?;
        let x = tape.add(te, pe)?;
        let (g, b) = (tape.param(self.emb_ln_g), tape.param(self.emb_ln_b));
        let x = tape.layer_norm(x, g, b, LAYER_NORM_EPS)?;
        let mut x = self.dropout(tape, x, &mut dropout)?;

        for layer in &self.layers {
            let q = Self::linear(tape, x, layer.wq, layer.bq)?;
            let k = Self::linear(tape, x, layer.wk, layer.bk)?;
            let v = Self::linear(tape, x, layer.wv, layer.bv)?;
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dh, dh)?;
                let kh = tape.slice_cols(k, h * dh, dh)?;
                let vh = tape.slice_cols(v, h * dh, dh)?;
                let s = tape.matmul_nt(qh, kh)?;
                let s = tape.scale(s, scale);
                let a = tape.softmax_rows_masked(s, keep)?;
                outs.push(tape.matmul(a, vh)?);
            }
            let o = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
            let o = Self::linear(tape, o, layer.wo, layer.bo)?;
            let o = self.dropout(tape, o, &mut dropout)?;
            let r = tape.add(x, o)?;
            let (g, b) = (tape.param(layer.ln1_g), tape.param(layer.ln1_b));
            let x1 = tape.layer_norm(r, g, b, LAYER_NORM_EPS)?;

            let f = Self::linear(tape, x1, layer.w1, layer.b1)?;
            let f = tape.gelu(f);
            let f = Self::linear(tape, f, layer.w2, layer.b2)?;
            let f = self.dropout(tape, f, &mut dropout)?;
            let r = tape.add(x1, f)?;
            let (g, b) = (tape.param(layer.ln2_g), tape.param(layer.ln2_b));
            x = tape.layer_norm(r, g, b, LAYER_NORM_EPS)?;
        }
        Ok(x)
    }

    /// Vocabulary logits for the given hidden rows via the tied embedding.
    pub fn mlm_logits<T: Real>(&self, tape: &mut Tape<'_, T>, rows: Var) -> Result<Var, EncoderError> {
        let e = tape.param(self.tok_emb);
        let logits = tape.matmul_nt(rows, e)?;
        let b = tape.param(self.mlm_bias);
        Ok(tape.add_row(logits, b)?)
    }

    /// Hidden states of one segment as a `d×len` matrix (no dropout).
    pub fn encode_segment<T: Real>(
        &self,
        store: &ParamStore<T>,
        ids: &[usize],
        keep: &[bool],
    ) -> Result<Matrix<T>, EncoderError> {
        let mut tape = Tape::new(store);
        let x = self.forward_rows(&mut tape, ids, keep, None)?;
        Ok(tape.value(x).transpose())
    }
}

/// An encoder together with its own parameter store.
#[derive(Clone, Debug)]
pub struct EncoderState<T = f32> {
    pub encoder: Encoder,
    pub store: ParamStore<T>,
}

impl<T: Real> EncoderState<T> {
    pub fn init_random(config: &EncoderConfig) -> Result<Self, EncoderError> {
        let mut store = ParamStore::new();
        let encoder = Encoder::register(config, &mut store)?;
        Ok(Self { encoder, store })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn encode_segment(&self, ids: &[usize], keep: &[bool]) -> Result<Matrix<T>, EncoderError> {
        self.encoder.encode_segment(&self.store, ids, keep)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), EncoderError> {
        let meta = serde_json::json!({ "encoder": self.config(), "extra": extra });
        write_checkpoint(path, &meta, &self.store)
    }

    /// Loads a checkpoint written by [`EncoderState::save`] or by a full
    /// model; only `encoder.*` parameters are read.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), EncoderError> {
        let ckpt = read_checkpoint(path)?;
        let config: EncoderConfig = serde_json::from_value(
            ckpt.meta
                .get("encoder")
                .cloned()
                .ok_or_else(|| EncoderError::Format("manifest lacks an encoder config".into()))?,
        )
        .map_err(|e| EncoderError::Format(e.to_string()))?;
        let mut state = Self::init_random(&config)?;
        ckpt.load_into(&mut state.store, |name| name.starts_with("encoder."))?;
        let extra = ckpt.meta.get("extra").cloned().unwrap_or_default();
        Ok((state, extra))
    }
}

/// Checks that a pretrained encoder fits the configuration a model expects;
/// the error names the first differing dimension.
pub fn check_compatible(expected: &EncoderConfig, found: &EncoderConfig) -> Result<(), EncoderError> {
    let dims = [
        ("layers", expected.layers, found.layers),
        ("heads", expected.heads, found.heads),
        ("hidden", expected.hidden, found.hidden),
        ("ffn", expected.ffn, found.ffn),
        ("max_positions", expected.max_positions, found.max_positions),
        ("vocab_size", expected.vocab_size, found.vocab_size),
    ];
    for (what, e, f) in dims {
        if e != f {
            return Err(EncoderError::Mismatch {
                what: what.into(),
                expected: e.to_string(),
                found: f.to_string(),
            });
        }
    }
    Ok(())
}
