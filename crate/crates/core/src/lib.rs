//! Causality-driven attention for small convolutional classifiers.
//!
//! The pipeline: a [`model::TinyConvNet`] backbone produces a `[k, n, n]`
//! feature stack; [`causality`] estimates pairwise conditional
//! probabilities between its maps and counts their asymmetries; [`heads`]
//! feeds the classifier either the raw features (baseline), the features
//! plus the causality map (Cat), or the features plus a factor-weighted copy
//! (Mulcat). Damaged variants replace the causality signal with seeded
//! noise for ablations.

pub mod causality;
pub mod config;
pub mod data;
mod error;
pub mod heads;
pub mod model;
pub mod tensor;
pub mod textfmt;

pub use error::{Error, Result};

/// Environment variable capping the worker threads used for batch-parallel
/// sections.
pub const THREADS_ENV: &str = "CAUZEN_THREADS";

/// Configures the global worker pool from [`THREADS_ENV`], if set. Call once
/// at startup; later calls are ignored.
pub fn init_threads_from_env() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={value:?} is not a thread count")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
