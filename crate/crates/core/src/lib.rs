//! Frame-level behavior classification and post-dose deviation monitoring
//! for caged-mouse video.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`synthgen`] renders labeled PGM frames and pre/post sessions.
//! 2. [`preprocess`] samples, resizes, normalizes and augments frames.
//! 3. [`dataset`] loads manifests and builds stratified splits and folds.
//! 4. [`nn`] trains a small convolutional classifier and [`eval`] scores it.
//! 5. [`monitor`] turns per-frame predictions into windowed behavior
//!    distributions, builds a pre-phase baseline and raises alerts on
//!    post-phase deviation.
//!
//! [`cli`] wires all of it behind a single binary.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
mod fsutil;
pub mod monitor;
pub mod nn;
pub mod par;
pub mod preprocess;
pub mod rng;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
