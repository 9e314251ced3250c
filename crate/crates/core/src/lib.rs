//! Motion-cue video object segmentation: frame differences and Horn–Schunck
//! flow as motion inputs, a dual-encoder segmentation network trained with a
//! small built-in autodiff engine, and region/boundary segmentation metrics.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod raster;
pub mod tensor;

pub use error::{Error, Result};
