//! Batch experiment runner: parses a `key=value` config, runs one campaign
//! and writes CSV reports plus a manifest that reproduces the run.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod config;
pub mod manifest;

pub use campaign::{compute, run, Outcome, RunError};
pub use config::{Command, ConfigError, ExperimentConfig};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "RENORM_PLAP_THREADS";

/// Configures the global worker pool from [`THREADS_ENV`], if set.
pub fn init_thread_pool() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}
