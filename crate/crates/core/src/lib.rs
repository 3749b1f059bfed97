//! Paired-dataset construction, models, training and evaluation for x2
//! single-image super-resolution of multi-band rasters.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geo;
pub mod metrics;
pub mod models;
pub mod raster;
pub mod srras;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use raster::Raster;
