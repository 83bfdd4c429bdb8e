//! Manifest-driven experiment runner for the `chase_escape` library.
//!
//! [`manifest`] parses and validates experiment descriptions, [`run`]
//! executes them in memory and [`output`] persists the result bundle.

pub mod manifest;
pub mod output;
pub mod run;

use manifest::Manifest;
use run::{Bundle, RunError};

/// Runs `m` on a pool of `m.workers` threads.
pub fn execute(m: &Manifest) -> Result<Bundle, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.workers)
        .build()
        .map_err(|e| RunError::Simulation(e.to_string()))?;
    pool.install(|| run::execute(m))
}
