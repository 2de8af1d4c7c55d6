//! Penalty-kick direction prediction from detection and pose streams.
//!
//! The crate covers segmentation of a frame stream into an 8-frame sample,
//! a synthetic scenario generator, the dual-branch network and its training
//! loop, evaluation harnesses, and a streaming inference pipeline.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod frames;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod segmentation;
pub mod split;
pub mod synthgen;
pub mod training;
pub mod types;

pub use error::{Error, Result};
