//! Long-document multi-label classification with segment pooling and
//! label-aware attention, built on a small from-scratch autodiff engine.

pub mod corpus;
pub mod encoder;
pub mod gradcheck;
pub mod heads;
pub mod metrics;
pub mod rng;
pub mod segmenter;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use tensor::{Matrix, ParamGrads, ParamId, ParamStore, Parameter, Real, Tape, TensorError, Var};
