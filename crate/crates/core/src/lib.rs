//! Zero-shot adaptive transfer for slot tagging.
//!
//! Per-slot span detection conditioned on an embedded slot description,
//! with a linear-chain CRF on top, plus the concept-tagger and BiLSTM
//! baselines, the synthetic multi-domain corpus, training with
//! fine-tuning, and span-level evaluation.

pub mod baselines;
pub mod crf;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod tagger;
pub mod train;

pub use error::{Error, Result};

/// Scalar type used by all models.
pub type Real = f64;
pub type Tensor = numerics::Tensor<Real>;
pub type ParamSet = numerics::ParamSet<Real>;
pub type Tape<'a> = numerics::Tape<'a, Real>;
pub type AdamState = numerics::AdamState<Real>;
pub type Gradients = numerics::Gradients<Real>;
