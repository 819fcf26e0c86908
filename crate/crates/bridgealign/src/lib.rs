//! Brownian-bridge instance dynamics at desk scale.
//!
//! The crate models per-instance embedding trajectories as Brownian bridges
//! pinned at their head and tail frames, trains a small projector with the
//! bridge-text alignment objectives (head-tail matching, bridge contrastive,
//! bridge-text contrastive), links instance queries across frames with an
//! exact Hungarian solver, and runs a forward-only temporal resampler stack.
//! Everything operates on synthetic embedding data with seeded determinism.

pub mod bridge;
pub mod config;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod resampler;
pub mod simulator;
pub mod tensor_io;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};

/// Embeddings are plain dense vectors; all math is 64-bit.
pub type Embedding = Vec<f64>;
