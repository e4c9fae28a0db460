//! Command implementations behind the `kassoc` binary.

pub mod commands;
pub mod manifest;
pub mod overlay;
pub mod sequences;

use anyhow::{Context, Result};

/// Worker pool for per-sequence parallelism.
pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting worker threads")
}
