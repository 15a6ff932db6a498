//! Benchmark signature mining.
//!
//! A signature is a small set of in-the-wild token contexts whose per-model
//! perplexities predict a benchmark's per-model scores. This crate screens
//! perplexity columns with rank-based coefficients, distills the survivors
//! with AIC forward selection, and compares benchmarks at the semantic,
//! performance and signature level.

pub mod analysis;
pub mod config;
pub mod error;
pub mod ingest;
pub mod overlap;
pub mod pipeline;
pub mod rng;
pub mod screening;
pub mod selection;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
