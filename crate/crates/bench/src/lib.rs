//! Fixtures shared by the criterion benches.

use labelattn_core::corpus::LabelVector;
use labelattn_core::encoder::EncoderConfig;
use labelattn_core::heads::{HeadConfig, HeadKind};
use labelattn_core::rng::stream;
use labelattn_core::segmenter::SegmenterConfig;
use labelattn_core::tensor::Matrix;
use labelattn_core::tokenizer::NUM_SPECIAL;
use labelattn_core::training::{Model, ModelConfig};
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    let mut rng = stream(seed, 0xBE, 0);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Default-width encoder (2 layers, d=128, c=128) with the given head.
pub fn model(kind: HeadKind, num_labels: usize, vocab: usize) -> Model<f32> {
    Model::new(ModelConfig {
        encoder: EncoderConfig {
            vocab_size: vocab,
            dropout: 0.0,
            ..EncoderConfig::default()
        },
        head: HeadConfig {
            kind,
            ..HeadConfig::default()
        },
        segmenter: SegmenterConfig::default(),
        num_labels,
    })
    .expect("valid bench model")
}

pub fn random_tokens(len: usize, vocab: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, 0xBF, 0);
    (0..len).map(|_| rng.random_range(NUM_SPECIAL..vocab)).collect()
}

/// Random gold sets and scores for metric benches.
pub fn eval_fixture(docs: usize, labels: usize, seed: u64) -> (Vec<LabelVector>, Vec<Vec<f64>>) {
    let mut rng = stream(seed, 0xC0, 0);
    let gold = (0..docs)
        .map(|_| LabelVector((0..labels).map(|_| rng.random_bool(0.03)).collect()))
        .collect();
    let scores = (0..docs)
        .map(|_| (0..labels).map(|_| rng.random::<f64>()).collect())
        .collect();
    (gold, scores)
}
