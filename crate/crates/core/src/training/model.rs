use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{Document, LabelVector};
use crate::encoder::{check_compatible, read_checkpoint, write_checkpoint, Encoder, EncoderError, EncoderState};
use crate::heads::{prediction_from, Head, HeadConfig, HeadOutput, Prediction};
use crate::rng::Rng64;
use crate::segmenter::{encode_segments_on_tape, SegmenterConfig};
use crate::tensor::{ParamGrads, ParamStore, Real, Tape};
use crate::tokenizer::Tokenizer;
use crate::encoder::EncoderConfig;

/// A document ready for the model: token ids plus gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDoc {
    pub id: String,
    pub tokens: Vec<usize>,
    pub gold: LabelVector,
}

impl EncodedDoc {
    pub fn new(doc: &Document, tokenizer: &Tokenizer, num_labels: usize) -> Self {
        Self {
            id: doc.id.clone(),
            tokens: tokenizer.encode_words(&doc.words),
            gold: LabelVector::from_ids(&doc.labels, num_labels),
        }
    }

    pub fn batch(docs: &[Document], tokenizer: &Tokenizer, num_labels: usize) -> Vec<Self> {
        docs.iter().map(|d| Self::new(d, tokenizer, num_labels)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub segmenter: SegmenterConfig,
    pub num_labels: usize,
}

/// Encoder and head sharing one parameter store. Encoder parameters are
/// registered first, so their names and order match a bare encoder
/// checkpoint.
#[derive(Clone, Debug)]
pub struct Model<T = f32> {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: Head,
    pub store: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self, TrainError> {
        config.segmenter.validate(config.encoder.max_positions)?;
        let mut store = ParamStore::new();
        let encoder = Encoder::register(&config.encoder, &mut store)?;
        let head = Head::register(&config.head, config.encoder.hidden, config.num_labels, &mut store)?;
        Ok(Self {
            config,
            encoder,
            head,
            store,
        })
    }

    /// Fresh head on top of a (pretrained) encoder.
    pub fn with_encoder(config: ModelConfig, pretrained: &EncoderState<T>) -> Result<Self, TrainError> {
        check_compatible(&config.encoder, pretrained.config())?;
        let mut model = Self::new(config)?;
        for (_, p) in pretrained.store.iter() {
            let id = model.store.find(&p.name).ok_or_else(|| EncoderError::Mismatch {
                what: p.name.clone(),
                expected: "no such parameter".into(),
                found: "present".into(),
            })?;
            model.store.get_mut(id).value = p.value.clone();
        }
        Ok(model)
    }

    /// Same structure over a store of a different precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.clone(),
            head: self.head.clone(),
            store: self.store.cast(),
        }
    }

    /// Builds the document forward pass on `tape`.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        tokens: &[usize],
        dropout: Option<&mut Rng64>,
    ) -> Result<HeadOutput, TrainError> {
        let seg = &self.config.segmenter;
        let segments = seg.segments(tokens)?;
        let nodes = encode_segments_on_tape(tape, &self.encoder, &segments, seg.include_specials, dropout)?;
        Ok(self.head.forward(tape, &nodes)?)
    }

    pub fn predict(&self, tokens: &[usize]) -> Result<Prediction, TrainError> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, tokens, None)?;
        Ok(prediction_from(&tape, &out))
    }

    /// Per-document loss (BCE averaged over labels) and its gradients.
    pub fn loss_and_grads(
        &self,
        doc: &EncodedDoc,
        dropout: Option<&mut Rng64>,
    ) -> Result<(f64, ParamGrads<T>), TrainError> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, &doc.tokens, dropout)?;
        let targets: Vec<T> = doc.gold.0.iter().map(|&y| if y { T::one() } else { T::zero() }).collect();
        let loss = tape.sigmoid_bce(out.logits, &targets)?;
        let value = tape.value(loss).get(0, 0).as_f64();
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss(format!("document {}", doc.id)));
        }
        Ok((value, tape.backward(loss)?))
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<(), TrainError> {
        let meta = serde_json::json!({
            "encoder": self.config.encoder,
            "model": self.config,
            "extra": extra,
        });
        Ok(write_checkpoint(path, &meta, &self.store)?)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), TrainError> {
        let ckpt = read_checkpoint(path)?;
        let config: ModelConfig = ckpt
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| EncoderError::Format("checkpoint has no model section".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| EncoderError::Format(e.to_string())))?;
        let mut model = Self::new(config)?;
        ckpt.load_into(&mut model.store, |_| true)?;
        let extra = ckpt.meta.get("extra").cloned().unwrap_or_default();
        Ok((model, extra))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;

    pub(crate) fn tiny(kind: HeadKind) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                layers: 1,
                heads: 2,
                hidden: 8,
                ffn: 16,
                max_positions: 10,
                vocab_size: 30,
                dropout: 0.0,
                seed: 1,
            },
            head: HeadConfig { kind, ..Default::default() },
            segmenter: SegmenterConfig {
                segment_len: 8,
                max_doc_len: 64,
                ..Default::default()
            },
            num_labels: 3,
        }
    }

    #[test]
    fn save_load_reproduces_predictions_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let model = Model::<f32>::new(tiny(HeadKind::Laat)).unwrap();
        let tokens: Vec<usize> = (0..20).map(|i| 5 + i % 25).collect();
        let before = model.predict(&tokens).unwrap();
        model.save(&path, serde_json::json!({"note": "x"})).unwrap();
        let (loaded, extra) = Model::<f32>::load(&path).unwrap();
        assert_eq!(extra["note"], "x");
        assert_eq!(before, loaded.predict(&tokens).unwrap());
    }

    #[test]
    fn pretrained_encoder_is_copied() {
        let config = tiny(HeadKind::ClsMean);
        let mut enc = EncoderState::<f32>::init_random(&EncoderConfig { seed: 99, ..config.encoder.clone() }).unwrap();
        enc.store.iter_mut().for_each(|p| p.value.fill(0.25));
        let model = Model::with_encoder(config, &enc).unwrap();
        let id = model.store.find("encoder.layer0.attn.wq").unwrap();
        assert!(model.store.value(id).as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn incompatible_encoder_is_rejected() {
        let config = tiny(HeadKind::Laat);
        let enc = EncoderState::<f32>::init_random(&EncoderConfig { ffn: 32, ..config.encoder.clone() }).unwrap();
        let err = Model::with_encoder(config, &enc).unwrap_err().to_string();
        assert!(err.contains("ffn"), "{err}");
    }
}
