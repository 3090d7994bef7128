//! Skeleton-joint fall detection with spatio-temporal graph convolutions.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod model;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
