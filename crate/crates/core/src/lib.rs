//! Interleaved volume-language modelling at desk scale.
//!
//! The crate covers the whole pipeline for a radiology foundation model that
//! reads 2D and 3D scans interleaved with text:
//!
//! - [`numerics`]: `f64` tensors, reverse-mode autodiff, AdamW, checkpoints.
//! - [`volume`]: the scan data model, file format and preprocessing.
//! - [`vision`]: 3D patch embedding, factorized position tables, ViT encoder.
//! - [`perceiver`]: cross-attention resampler to a fixed number of queries.
//! - [`language`]: vocabulary, tokenizer, interleaved assembly, causal LM,
//!   greedy generation.
//! - [`training`]: lexicon-driven per-token loss weights, the weighted
//!   objective and the two-phase schedule.
//! - [`corpus`]: samples, prompt templates, synthetic data and curation.
//! - [`eval`]: the benchmark metrics and runner.
//! - [`cli`]: the `ivlm` command line.
//!
//! Runnable walkthroughs for each capability live under `examples/`.

pub mod cli;
pub mod corpus;
mod error;
pub mod eval;
pub mod language;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod perceiver;
pub mod training;
pub mod vision;
pub mod volume;

pub use error::{Error, Result};
