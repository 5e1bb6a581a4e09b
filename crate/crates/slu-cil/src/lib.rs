//! Class-incremental continual learning for sequence-to-sequence spoken
//! language understanding, self-contained at desk scale.
//!
//! The crate trains a small encoder-decoder transformer on a synthetic
//! SLURP-like corpus, splits the corpus into scenario-based tasks, and
//! fights catastrophic forgetting with rehearsal buffers plus three
//! knowledge-distillation losses (audio-, token-, and sequence-level)
//! weighted by the rehearsal fraction of each mini-batch. An experiment
//! runner reproduces the comparative methodology: offline upper bound,
//! fine-tuning lower bound, rehearsal variants, and KD combinations.

pub mod autodiff;
pub mod cil;
pub mod data;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
