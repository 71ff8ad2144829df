//! Configuration handling and output for the `crossdiff` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;

pub use commands::{audit, converge, run, steady, AuditReport, RunMetadata, RunOutcome};
pub use config::{config_hash, parse_config, parse_config_with, preset_config, Overrides};
pub use error::{CliError, Result};

/// Sizes the global rayon pool, which runs the members of a convergence
/// study concurrently. Later calls have no effect.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|&n| n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}
