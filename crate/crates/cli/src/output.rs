//! Report files and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use mvperiodic_core::{Experiment, Report, RNG_SCHEME, SOURCE_HASH};
use serde::{Deserialize, Serialize};

use crate::config::{CliError, OutputOptions, RunConfig};
use crate::plot;

pub const MANIFEST_FORMAT: &str = "mvperiodic-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

/// Everything needed to reproduce a run. Worker counts are left out on
/// purpose because they never change the numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub code_version: String,
    pub package_version: String,
    pub rng_scheme: String,
    pub seeds: Vec<u64>,
    pub dt: f64,
    pub t0: f64,
    pub period_steps: usize,
    pub n_steps: usize,
    pub experiment: Experiment,
    pub output: OutputOptions,
}

impl Manifest {
    pub fn new(experiment: &Experiment, output: &OutputOptions, seeds: Vec<u64>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            code_version: SOURCE_HASH.into(),
            package_version: env!("CARGO_PKG_VERSION").into(),
            rng_scheme: RNG_SCHEME.into(),
            seeds,
            dt: experiment.grid.dt,
            t0: experiment.grid.t0,
            period_steps: experiment.grid.period_steps,
            n_steps: experiment.grid.n_steps,
            experiment: experiment.clone(),
            // outputs land next to the manifest when it is replayed
            output: OutputOptions { dir: PathBuf::from("."), ..output.clone() },
        }
    }
}

/// Loads a manifest written by an earlier run as a configuration. The
/// output directory defaults to the manifest's own directory.
pub fn load_manifest(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Parse { line: Some(e.line()), message: e.to_string() })?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(CliError::Validation(format!("unsupported manifest format `{}`", manifest.format)));
    }
    if manifest.rng_scheme != RNG_SCHEME {
        return Err(CliError::Validation(format!(
            "manifest was produced with RNG scheme `{}`, this build uses `{RNG_SCHEME}`",
            manifest.rng_scheme
        )));
    }
    let exp = &manifest.experiment;
    exp.grid.check_aligned(exp.scenario.tau()).map_err(|e| CliError::Validation(e.to_string()))?;
    exp.config.validate(&exp.scenario).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut output = manifest.output.clone();
    output.dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok(RunConfig { experiment: manifest.experiment, output })
}

/// Writes the report, its series and the manifest; returns the written paths.
pub fn write_outputs(cfg: &RunConfig, report: &Report) -> Result<Vec<PathBuf>, CliError> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    if cfg.output.json {
        put(REPORT_FILE.into(), report.to_json())?;
    }
    for series in &report.series {
        if cfg.output.csv {
            put(format!("{}.csv", series.name), series.to_csv())?;
        }
        if cfg.output.svg && !series.rows.is_empty() {
            put(format!("{}.svg", series.name), plot::render(series))?;
        }
    }
    let manifest = Manifest::new(&cfg.experiment, &cfg.output, report.seeds.clone());
    put(MANIFEST_FILE.into(), serde_json::to_string_pretty(&manifest).expect("manifest is serializable"))?;
    Ok(written)
}
