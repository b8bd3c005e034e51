//! Click-through-rate models built on a shared sparse-feature pipeline: a
//! factorization machine, an attention-pooled dense network, and the joint
//! model combining both, plus LR / DNN / DeepFM baselines and a DenseFM
//! ablation.
//!
//! Everything is plain `f64` with hand-written forward and backward passes,
//! a pinned PRNG, and fixed accumulation orders, so a given seed reproduces
//! a training run bit for bit.

pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
