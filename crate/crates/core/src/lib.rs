//! Attention-pattern mining with a masked autoencoder.
//!
//! The pipeline mines Java completion tasks, harvests attention patterns from
//! a small causal language model, learns a masked autoencoder over
//! log-scaled lower-triangular patterns, clusters per-head embeddings,
//! predicts generation correctness from cluster labels with Shapley head
//! attribution, and zeroes heads to move accuracy.

pub mod classify;
pub mod cluster;
pub mod error;
pub mod intervene;
pub mod io;
pub mod lm;
pub mod mae;
pub mod miner;
pub mod motifs;
pub mod nn;
pub mod pattern;

pub use error::{Error, Result};
