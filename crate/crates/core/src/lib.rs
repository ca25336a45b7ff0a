//! Disentangled content/appearance representation learning for image quality
//! prediction and example-guided image processing.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod cli;
pub mod distortion;
pub mod egip;
pub mod error;
pub mod network;
pub mod objective;
pub mod pixelcore;
pub mod probe;
pub mod quality;
pub mod synth;
pub mod tonemap;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
