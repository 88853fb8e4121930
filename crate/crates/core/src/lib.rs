//! Curriculum-based self-supervised visual pretraining.
//!
//! Builds jigsaw and patch-pair pretext tasks from unlabeled images, trains a
//! shared-weight convolutional encoder under a difficulty-ordered jitter
//! curriculum, transfers the encoder to a downstream classifier and probes
//! representation quality with nearest-neighbour retrieval.

pub mod cli;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod permutations;
pub mod pipeline;
pub mod rng;
pub mod tasks;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
