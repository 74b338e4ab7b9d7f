//! Keyword-conditioned clarification question generation.
//!
//! A TextCNN predicts which keywords a question about a context is likely
//! to use; a GRU encoder-decoder with attention generates a question
//! conditioned on a selected keyword subset through a small "bridge"
//! network. Selection strategies (threshold, sampling, co-occurrence
//! clustering), constrained decoding, deduplication and evaluation metrics
//! sit around the two models.

pub mod bundle;
pub mod decoding;
pub mod error;
pub mod generator;
pub mod group;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod selection;
pub mod synth;
pub mod textproc;

pub use error::{Error, Result};
