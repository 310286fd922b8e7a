//! Image classification by prior-conditioned diffusion over class-label
//! vectors, with dual-granularity guidance and a K-fold evaluation harness.

pub mod checkpoint;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod guidance;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};

/// Preprocessed image, laid out `[height, width, channel]`.
pub type Image = ndarray::Array3<f64>;
