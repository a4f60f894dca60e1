//! Verification experiments: each runner simulates, fits and returns a [`Report`].

pub mod fit;
mod report;
mod runners;
pub mod suite;

use serde::{Deserialize, Serialize};

use crate::coupling::CouplingMode;
use crate::error::{Error, Result};
use crate::ips::{InitLaw, LawScheme, DEFAULT_GUARD};
use crate::models::Scenario;
use crate::noise::TimeGrid;

pub use fit::{fit_exponential, fit_linear, fit_power_law, mean_and_se, median, phi_rate, sign_test, LinearFit, RateFit, RateModel};
pub use report::{Check, FitRecord, Report, Series, Verdict};
pub use runners::{
    run_contraction, run_law_periodicity, run_oracle_mean, run_pathwise_periodicity, run_poc, run_pullback,
};

/// Fits with `r²` below this cannot fail a check, only leave it inconclusive.
pub const MIN_R_SQUARED: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PathwisePeriodicity,
    OracleMean,
    Pullback,
    Contraction,
    Poc,
    LawPeriodicity,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::PathwisePeriodicity => "pathwise_periodicity",
            ExperimentKind::OracleMean => "oracle_mean",
            ExperimentKind::Pullback => "pullback",
            ExperimentKind::Contraction => "contraction",
            ExperimentKind::Poc => "poc",
            ExperimentKind::LawPeriodicity => "law_periodicity",
        }
    }
}

fn default_n() -> usize {
    256
}
fn default_n_list() -> Vec<usize> {
    vec![8, 32, 128, 512]
}
fn default_replicas() -> usize {
    16
}
fn default_horizons() -> Vec<usize> {
    vec![1, 2, 4, 8, 16, 32]
}
fn default_init() -> InitLaw {
    InitLaw::Gaussian { mean: vec![0.0], sd: 0.5 }
}
fn default_burn_in() -> f64 {
    20.0
}
fn default_one() -> f64 {
    1.0
}
fn default_mode() -> CouplingMode {
    CouplingMode::ReflectionMixed
}
fn default_slope_ceiling() -> f64 {
    -0.45
}
fn default_eps0() -> f64 {
    0.5
}
fn default_splits() -> usize {
    16
}
fn default_fidelity_splits() -> usize {
    8
}
fn default_scheme() -> LawScheme {
    LawScheme::EulerConsistent
}
fn default_pool() -> usize {
    256
}
fn default_guard() -> f64 {
    DEFAULT_GUARD
}
fn default_phase_points() -> usize {
    8
}

/// Experiment parameters. Fields irrelevant to the selected kind are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Particles per system (ensemble size `R` for law periodicity).
    #[serde(default = "default_n", alias = "N")]
    pub n: usize,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    /// Reference-law size; defaults to `16·max(n_list)`.
    #[serde(default)]
    pub m_ref: Option<usize>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_init")]
    pub init: InitLaw,
    /// Second initial law (contraction, partial PoC); defaults to `init`.
    #[serde(default)]
    pub init_b: Option<InitLaw>,
    #[serde(default = "default_burn_in")]
    pub burn_in_periods: f64,
    /// Spacing of recorded time points, in periods.
    #[serde(default = "default_one")]
    pub sample_every_periods: f64,
    /// Explicit recording times in periods (PoC); overrides `sample_every_periods`.
    #[serde(default)]
    pub sample_periods: Option<Vec<f64>>,
    /// Phase within the period, as a fraction of `τ`.
    #[serde(default)]
    pub phase: Option<f64>,
    #[serde(default = "default_phase_points")]
    pub phase_points: usize,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "default_mode")]
    pub coupling: CouplingMode,
    #[serde(default)]
    pub rate_floor: Option<f64>,
    #[serde(default = "default_slope_ceiling")]
    pub slope_ceiling: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_fidelity_splits")]
    pub fidelity_splits: usize,
    /// Time at which marginal-law fidelity is checked, in periods.
    #[serde(default)]
    pub fidelity_periods: Option<f64>,
    #[serde(default = "default_scheme")]
    pub law_scheme: LawScheme,
    /// Pooled sample size per `N` for the partial-regime PoC.
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_guard")]
    pub guard: f64,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            n: default_n(),
            n_list: default_n_list(),
            m_ref: None,
            replicas: default_replicas(),
            horizons: default_horizons(),
            init: default_init(),
            init_b: None,
            burn_in_periods: default_burn_in(),
            sample_every_periods: default_one(),
            sample_periods: None,
            phase: None,
            phase_points: default_phase_points(),
            eps: None,
            coupling: default_mode(),
            rate_floor: None,
            slope_ceiling: default_slope_ceiling(),
            eps0: default_eps0(),
            splits: default_splits(),
            fidelity_splits: default_fidelity_splits(),
            fidelity_periods: None,
            law_scheme: default_scheme(),
            pool: default_pool(),
            guard: default_guard(),
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        let d = scenario.dim();
        for (name, law) in [("init", Some(&self.init)), ("init_b", self.init_b.as_ref())] {
            if let Some(law) = law {
                if law.dim() != d {
                    return Err(Error::InvalidParameter(format!(
                        "{name} has dimension {} but scenario `{}` has {d}",
                        law.dim(),
                        scenario.name
                    )));
                }
            }
        }
        if self.n == 0 || self.replicas == 0 || self.n_list.contains(&0) {
            return Err(Error::InvalidParameter("particle and replica counts must be positive".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("n_list must be strictly increasing".into()));
        }
        if self.horizons.windows(2).any(|w| w[1] < w[0]) || self.horizons.is_empty() {
            return Err(Error::InvalidParameter("horizons must be non-empty and non-decreasing".into()));
        }
        if !(self.sample_every_periods > 0.0) {
            return Err(Error::InvalidParameter("sample_every_periods must be positive".into()));
        }
        RateModel::new(self.eps0, d)?;
        Ok(())
    }

    pub fn init_b(&self) -> &InitLaw {
        self.init_b.as_ref().unwrap_or(&self.init)
    }
}

/// A scenario, a grid and the experiment parameters: everything a run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub scenario: Scenario,
    pub grid: TimeGrid,
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn new(scenario: Scenario, grid: TimeGrid, config: ExperimentConfig) -> Self {
        Self { scenario, grid, config }
    }

    /// Runs the selected experiment on the current rayon pool.
    pub fn run(&self) -> Result<Report> {
        self.grid.check_aligned(self.scenario.tau())?;
        self.config.validate(&self.scenario)?;
        match self.config.kind {
            ExperimentKind::PathwisePeriodicity => run_pathwise_periodicity(self),
            ExperimentKind::OracleMean => run_oracle_mean(self),
            ExperimentKind::Pullback => run_pullback(self),
            ExperimentKind::Contraction => run_contraction(self),
            ExperimentKind::Poc => run_poc(self),
            ExperimentKind::LawPeriodicity => run_law_periodicity(self),
        }
    }

    /// Runs on a dedicated pool of `workers` threads.
    pub fn run_with_workers(&self, workers: usize) -> Result<Report> {
        with_workers(workers, || self.run())
    }
}

/// Executes `f` on a rayon pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool construction");
    pool.install(f)
}
