//! Particle simulation and verification engine for time-periodic
//! McKean-Vlasov SDEs.

pub mod coupling;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod ips;
pub mod metrics;
pub mod models;
pub mod noise;

pub use ensemble::{tree_sum, Ensemble};
pub use error::{Error, Result};
pub use models::{
    compute_stats, DerivedConstants, OwnedLaw, Diffusion, MeasureStats, MeasureView, Regime, Scenario,
    ScenarioKind, StatsRequirement,
};
pub use noise::{Driver, NoiseBundle, TimeGrid, RNG_SCHEME};
pub use experiments::{Experiment, ExperimentConfig, ExperimentKind, Report, Verdict};
pub use ips::InitLaw;

/// Short hash of the engine sources, recorded in run manifests.
pub const SOURCE_HASH: &str = env!("MVP_SOURCE_HASH");
