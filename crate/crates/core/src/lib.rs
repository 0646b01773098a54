//! Pedestrian crossing-intention prediction from skeleton sequences.
//!
//! A graph-convolutional GRU runs over windows of 19-joint skeletons and a
//! small ReLU/linear head emits crossing (C) versus not-crossing (NC)
//! probabilities. The crate also carries the training loop, a streaming
//! sliding-window evaluator and a procedural scenario generator that
//! produces labeled skeleton clips.

pub mod bench;
pub mod checkpoint;
pub mod clip;
pub mod error;
pub mod eval;
pub mod gconv;
mod linalg;
pub mod model;
pub mod rng;
pub mod skeleton;
pub mod synthgen;
pub mod train;

pub use clip::{ClipRecord, Label};
pub use error::{Error, Result};
