//! Mortality prediction from ICU nursing notes with a small convolutional
//! text classifier, plus Shapley-value word attributions computed with
//! DeepLIFT and checked against exact and sampled Shapley oracles.
//!
//! The crate is organized along the pipeline:
//!
//! - [`corpus`]: note ingestion, cohort rules, time-window documents and a
//!   synthetic corpus generator.
//! - [`textpipe`]: tokenizer, stop-words, per-fold vocabulary, vectorization.
//! - [`tensor`]: the numeric core (layers, loss, Adam).
//! - [`model`]: the classifier, training loop and checkpoints.
//! - [`eval`]: folds, ROC analysis, confidence intervals, Mann-Whitney U.
//! - [`attribution`]: DeepLIFT, exact and sampled Shapley values, smoothing.
//! - [`viz`]: HTML heatmaps, word importance lists and SVG charts.
//! - [`verify`]: self-checking numerical verification suite.

pub mod attribution;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod textpipe;
pub mod verify;
pub mod viz;

pub use error::{Error, Result};
