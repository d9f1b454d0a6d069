//! Experiment tooling around the core training library: dataset
//! manifests and splits, a synthetic corpus generator, batch scheduling,
//! the training loop, checkpoints, and report rendering.

pub mod batches;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod manifest;
pub mod report;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
