//! Sparse grids of truncated path signatures for online handwriting, and
//! sparse DeepCNet convolutional networks that consume them.

pub mod data;
pub mod error;
pub mod network;
pub mod raster;
pub mod signature;

pub use error::{Error, Result};
