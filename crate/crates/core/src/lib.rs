//! Self-supervised representation learning by ranking.
//!
//! Every view of a multi-view batch acts as a retrieval query against all other
//! views; views of the same source are the relevant items. The encoder is trained to
//! maximize the sigmoid-smoothed average precision of those rankings.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks). Concrete aliases for both precisions are exported below.

pub mod baselines;
pub mod batch;
pub mod config;
pub mod datasets;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod ranking;
pub mod scalar;
pub mod selftest;

pub use error::{Error, Result};
pub use scalar::Scalar;

use serde::{Deserialize, Serialize};

/// How per-query work inside one batch is scheduled.
///
/// Queries write disjoint outputs and reductions run in index order, so both modes
/// give bit-identical results; `Deterministic` additionally stays on one thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Deterministic,
    Parallel,
}

pub type ApResult32 = ranking::ApResult<f32>;
pub type ApResult64 = ranking::ApResult<f64>;
pub type SimilarityMatrix32 = embedding::SimilarityMatrix<f32>;
pub type SimilarityMatrix64 = embedding::SimilarityMatrix<f64>;
pub type EncoderParams32 = encoder::EncoderParams<f32>;
pub type EncoderParams64 = encoder::EncoderParams<f64>;
pub type Gradients32 = encoder::Gradients<f32>;
pub type Gradients64 = encoder::Gradients<f64>;
pub type Dataset32 = datasets::LabeledDataset<f32>;
pub type Dataset64 = datasets::LabeledDataset<f64>;
pub type ViewBatch32 = batch::ViewBatch<f32>;
pub type ViewBatch64 = batch::ViewBatch<f64>;
