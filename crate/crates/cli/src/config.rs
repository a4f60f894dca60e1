//! Run configuration files: four TOML sections, strict keys, located errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mvperiodic_core::models::ParamValue;
use mvperiodic_core::{Error as CoreError, Experiment, ExperimentConfig, Scenario, TimeGrid};
use serde::{Deserialize, Serialize};
use toml::Spanned;

/// Failures before, during or after a run. All map to exit code 3.
#[derive(Debug)]
pub enum CliError {
    Parse { line: Option<usize>, message: String },
    Validation(String),
    Runtime(CoreError),
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::Validation(_) => "ValidationError",
            CliError::Runtime(e) => e.kind(),
            CliError::Io { .. } => "Io",
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }

    /// `{"status":"error","kind":..,"message":..}`, plus `line` for parse errors.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "status": "error", "kind": self.kind(), "message": self.to_string() });
        if let CliError::Parse { line: Some(line), .. } = self {
            v["line"] = (*line).into();
        }
        v
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse { line: Some(line), message } => write!(f, "parse error at line {line}: {message}"),
            CliError::Parse { line: None, message } => write!(f, "parse error: {message}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
            CliError::Io { path, message } => write!(f, "{}: {message}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Runtime(e)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, Spanned<ParamValue>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dt: f64,
    periods: f64,
    #[serde(default)]
    t0: f64,
}

/// The `[output]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
    #[serde(default)]
    pub svg: bool,
    /// Worker threads; `MVP_WORKERS` takes precedence. Never affects output.
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self { dir: default_dir(), csv: true, json: true, svg: false, workers: None }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: RawScenario,
    grid: RawGrid,
    experiment: ExperimentConfig,
    #[serde(default)]
    output: OutputOptions,
}

/// A validated configuration: the experiment plus where its results go.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub output: OutputOptions,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses configuration text. Relative output directories stay relative.
pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let overrides: BTreeMap<String, ParamValue> =
        raw.scenario.params.iter().map(|(k, v)| (k.clone(), v.get_ref().clone())).collect();
    let scenario = Scenario::builtin(&raw.scenario.name, &overrides).map_err(|e| {
        let message = e.to_string();
        match raw.scenario.params.iter().find(|(k, _)| message.contains(&format!("unknown parameter `{k}`"))) {
            Some((_, v)) => CliError::Parse { line: Some(line_of(text, v.span().start)), message },
            None => CliError::Validation(message),
        }
    })?;
    let grid = TimeGrid::aligned(scenario.tau(), raw.grid.dt, raw.grid.periods, raw.grid.t0).map_err(|e| match e {
        CoreError::GridNotAligned(m) => CliError::Validation(format!("grid not period-aligned: {m}")),
        other => CliError::Validation(other.to_string()),
    })?;
    if !(raw.grid.periods > 0.0) {
        return Err(CliError::Validation("grid periods must be positive".into()));
    }
    raw.experiment.validate(&scenario).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(RunConfig { experiment: Experiment::new(scenario, grid, raw.experiment), output: raw.output })
}

/// Reads and parses a configuration file; a relative output directory is
/// taken relative to the file's own directory.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg = parse_config_str(&text)?;
    if cfg.output.dir.is_relative() {
        if let Some(parent) = path.parent() {
            cfg.output.dir = parent.join(&cfg.output.dir);
        }
    }
    Ok(cfg)
}
