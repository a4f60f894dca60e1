//! Library side of the `mvperiodic` command: configuration parsing, run
//! execution and output files.

pub mod config;
pub mod output;
pub mod plot;

use std::path::Path;

use mvperiodic_core::experiments::with_workers;
use mvperiodic_core::Report;

pub use config::{parse_config, parse_config_str, CliError, OutputOptions, RunConfig};
pub use output::{load_manifest, write_outputs, Manifest};

/// Loads either a TOML configuration or a `manifest.json` from a previous run.
pub fn load_input(path: &Path) -> Result<RunConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        load_manifest(path)
    } else {
        parse_config(path)
    }
}

/// Worker count: `MVP_WORKERS` if set, then the config value, then all cores.
pub fn resolve_workers(configured: Option<usize>) -> Option<usize> {
    std::env::var("MVP_WORKERS").ok().and_then(|v| v.trim().parse().ok()).or(configured)
}

/// Runs the experiment on the resolved pool and writes its outputs.
pub fn execute(cfg: &RunConfig) -> Result<Report, CliError> {
    let run = || cfg.experiment.run();
    let report = match resolve_workers(cfg.output.workers) {
        Some(w) => with_workers(w, run),
        None => run(),
    }?;
    write_outputs(cfg, &report)?;
    Ok(report)
}
