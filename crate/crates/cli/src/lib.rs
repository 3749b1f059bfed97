//! Library side of the `srforge` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod font;
pub mod montage;
pub mod tiling;

pub use error::{Error, Result};

/// Caps the worker pool at `SRFORGE_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SRFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("SRFORGE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(e.to_string()))
}
