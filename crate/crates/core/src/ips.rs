//! Euler-Maruyama integration of interacting and non-interacting particle
//! systems, and the pull-back construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{norm, Ensemble};
use crate::error::{Error, Result};
use crate::models::{
    compute_stats, mv_ou_mean_path, mv_ou_variance_path, MeasureStats, MeasureView, MvOuParams,
    OwnedLaw, Regime, Scenario,
};
use crate::noise::{gaussian_increment_into, Driver, NoiseBundle, TimeGrid};

pub const DEFAULT_GUARD: f64 = 1e8;

/// Particles per rayon task; only affects scheduling, never results.
const MIN_CHUNK: usize = 32;

/// Initial law of the particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitLaw {
    Point { x: Vec<f64> },
    /// Independent `N(mean, sd² I)` draws.
    Gaussian { mean: Vec<f64>, sd: f64 },
}

impl InitLaw {
    pub fn point(x: &[f64]) -> Self {
        InitLaw::Point { x: x.to_vec() }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Point { x } => x.len(),
            InitLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        match self {
            InitLaw::Point { x } => x,
            InitLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            InitLaw::Point { .. } => 0.0,
            InitLaw::Gaussian { sd, .. } => sd * sd,
        }
    }

    /// `n` particles at step `time_index`; `draw` selects an independent draw
    /// (particle `i` always uses the same stream within a draw).
    pub fn sample(&self, n: usize, seed: u64, draw: i64, time_index: i64) -> Result<Ensemble> {
        let d = self.dim();
        let mut states = vec![0.0; n * d];
        match self {
            InitLaw::Point { x } => {
                for row in states.chunks_exact_mut(d) {
                    row.copy_from_slice(x);
                }
            }
            InitLaw::Gaussian { mean, sd } => {
                for (i, row) in states.chunks_exact_mut(d).enumerate() {
                    gaussian_increment_into(seed, Driver::Init, i as u64, draw, 1.0, row);
                    for (v, m) in row.iter_mut().zip(mean) {
                        *v = m + sd * *v;
                    }
                }
            }
        }
        Ensemble::new(n, d, states, time_index)
    }
}

struct Scratch {
    drift: Vec<f64>,
    matrix: Vec<f64>,
    dw: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self { drift: vec![0.0; d], matrix: vec![0.0; d * d], dw: vec![0.0; d] }
    }
}

/// `out += m · v` for a row-major square `m`.
pub(crate) fn add_mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * d..(r + 1) * d];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Euler-Maruyama stepper for one scenario on one grid and noise realization.
#[derive(Clone, Copy)]
pub struct Integrator<'a> {
    pub scenario: &'a Scenario,
    pub grid: &'a TimeGrid,
    pub noise: &'a NoiseBundle,
    pub guard: f64,
    /// Driver identity of each particle (defaults to the particle index).
    pub driver_ids: Option<&'a [usize]>,
}

impl<'a> Integrator<'a> {
    pub fn new(scenario: &'a Scenario, grid: &'a TimeGrid, noise: &'a NoiseBundle) -> Self {
        Self { scenario, grid, noise, guard: DEFAULT_GUARD, driver_ids: None }
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn with_driver_ids(mut self, ids: &'a [usize]) -> Self {
        self.driver_ids = Some(ids);
        self
    }

    fn driver(&self, i: usize) -> usize {
        self.driver_ids.map_or(i, |ids| ids[i])
    }

    fn check_dims(&self, ens: &Ensemble) -> Result<()> {
        if ens.d() != self.scenario.dim() || self.noise.dim() != ens.d() {
            return Err(Error::Dimension(format!(
                "ensemble d = {}, scenario d = {}, noise d = {}",
                ens.d(),
                self.scenario.dim(),
                self.noise.dim()
            )));
        }
        if let Some(ids) = self.driver_ids {
            if ids.len() != ens.n() {
                return Err(Error::SizeMismatch { left: ids.len(), right: ens.n() });
            }
        }
        Ok(())
    }

    /// Advances every particle by one step. `law` replaces the empirical
    /// measure of `ens` as the measure argument (non-interacting particles).
    pub fn step(&self, ens: &Ensemble, law: Option<&MeasureView<'_>>) -> Result<Ensemble> {
        let mut next = vec![0.0; ens.states().len()];
        self.step_into(ens, law, &mut next)?;
        Ensemble::new(ens.n(), ens.d(), next, ens.time_index + 1)
    }

    /// In-place variant of [`Integrator::step`]; `buffer` is reused between calls.
    pub fn step_in_place(
        &self,
        ens: &mut Ensemble,
        law: Option<&MeasureView<'_>>,
        buffer: &mut Vec<f64>,
    ) -> Result<()> {
        buffer.resize(ens.states().len(), 0.0);
        self.step_into(ens, law, buffer)?;
        ens.states_mut().swap_with_slice(buffer);
        ens.time_index += 1;
        Ok(())
    }

    fn step_into(&self, ens: &Ensemble, law: Option<&MeasureView<'_>>, next: &mut [f64]) -> Result<()> {
        self.check_dims(ens)?;
        let d = ens.d();
        let k = ens.time_index;
        let own;
        let view = match law {
            Some(v) => *v,
            None => {
                own = OwnedLaw::from_ensemble(self.scenario, ens)?;
                own.view()
            }
        };
        let t = self.grid.phase_time(k);
        let dt = self.grid.dt;
        let old = ens.states();
        next.par_chunks_mut(d)
            .enumerate()
            .with_min_len(MIN_CHUNK)
            .try_for_each_init(
                || Scratch::new(d),
                |buf, (i, out)| self.advance(t, k, dt, self.driver(i), &old[i * d..(i + 1) * d], &view, out, buf),
            )?;
        let divergent = next.chunks_exact(d).enumerate().find_map(|(i, r)| {
            let m = norm(r);
            (!m.is_finite() || m > self.guard).then_some((i, m))
        });
        match divergent {
            Some((particle, magnitude)) => Err(Error::DivergenceDetected { step: k, particle, magnitude }),
            None => Ok(()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        t: f64,
        k: i64,
        dt: f64,
        driver: usize,
        x: &[f64],
        view: &MeasureView<'_>,
        out: &mut [f64],
        buf: &mut Scratch,
    ) -> Result<()> {
        let s = self.scenario;
        s.drift_into(t, x, view, &mut buf.drift)?;
        for ((o, xi), b) in out.iter_mut().zip(x).zip(&buf.drift) {
            *o = xi + b * dt;
        }
        if self.noise.is_silent() {
            return Ok(());
        }
        match s.regime() {
            Regime::FullyDissipative => {
                s.full_diffusion_into(t, x, view, &mut buf.matrix);
                self.noise.increment_into(Driver::W, driver, k, &mut buf.dw);
                add_mat_vec(&buf.matrix, &buf.dw, out);
            }
            Regime::PartiallyDissipative => {
                let p = s.partial().expect("partial regime");
                let root_alpha = p.alpha.at(t, p.tau).sqrt();
                self.noise.increment_into(Driver::B, driver, k, &mut buf.dw);
                for (o, db) in out.iter_mut().zip(&buf.dw) {
                    *o += root_alpha * db;
                }
                if !p.sigma_hat_is_zero() {
                    p.sigma_hat_into(t, x, &mut buf.matrix);
                    self.noise.increment_into(Driver::W, driver, k, &mut buf.dw);
                    add_mat_vec(&buf.matrix, &buf.dw, out);
                }
            }
        }
        Ok(())
    }

    /// Runs `n_steps` steps from `init`, returning the states at the requested
    /// step offsets (relative to the initial step, sorted, deduplicated).
    pub fn run(&self, init: &Ensemble, n_steps: usize, snapshot_steps: &[usize]) -> Result<Vec<Ensemble>> {
        if let Some(&bad) = snapshot_steps.iter().find(|&&s| s > n_steps) {
            return Err(Error::InvalidParameter(format!("snapshot step {bad} beyond {n_steps} steps")));
        }
        let mut wanted: Vec<usize> = snapshot_steps.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        let mut out = Vec::with_capacity(wanted.len());
        let mut ens = init.clone();
        let mut buffer = Vec::new();
        let mut next = wanted.iter().peekable();
        for step in 0..=n_steps {
            while next.peek() == Some(&&step) {
                out.push(ens.clone());
                next.next();
            }
            if step == n_steps || next.peek().is_none() {
                break;
            }
            self.step_in_place(&mut ens, None, &mut buffer)?;
        }
        Ok(out)
    }

    /// Runs `n_steps` steps and returns the final ensemble.
    pub fn run_to_end(&self, init: &Ensemble, n_steps: usize) -> Result<Ensemble> {
        let mut ens = init.clone();
        let mut buffer = Vec::new();
        for _ in 0..n_steps {
            self.step_in_place(&mut ens, None, &mut buffer)?;
        }
        Ok(ens)
    }
}

/// One Euler-Maruyama step of the interacting system using its own empirical measure.
pub fn em_step(scenario: &Scenario, grid: &TimeGrid, ensemble: &Ensemble, noise: &NoiseBundle) -> Result<Ensemble> {
    Integrator::new(scenario, grid, noise).step(ensemble, None)
}

/// Snapshots of the interacting system at the requested steps (relative to
/// the initial `time_index`).
pub fn simulate(
    scenario: &Scenario,
    grid: &TimeGrid,
    init: &Ensemble,
    noise: &NoiseBundle,
    snapshot_steps: &[usize],
) -> Result<Vec<Ensemble>> {
    Integrator::new(scenario, grid, noise).run(init, grid.n_steps, snapshot_steps)
}

/// Large-`M` interacting run used as a proxy for the law of the nonlinear equation.
pub fn reference_law(
    scenario: &Scenario,
    grid: &TimeGrid,
    init: &InitLaw,
    m: usize,
    seed: u64,
    snapshot_steps: &[usize],
) -> Result<Vec<Ensemble>> {
    let start = init.sample(m, seed, 0, 0)?;
    let noise = NoiseBundle::new(seed, scenario.dim(), grid.dt);
    simulate(scenario, grid, &start, &noise, snapshot_steps)
}

/// How the closed-form MV-OU law proxy is propagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawScheme {
    /// Exact continuous-time mean and variance.
    Exact,
    /// Mean and variance of the Euler-Maruyama chain of the nonlinear equation,
    /// free of time-discretization bias relative to the particle scheme.
    EulerConsistent,
}

/// Summary statistics of the MV-OU law, advanced in lockstep with a particle run.
#[derive(Clone, Debug)]
pub struct MvOuLawStream {
    params: MvOuParams,
    grid: TimeGrid,
    scheme: LawScheme,
    start: i64,
    init_mean: Vec<f64>,
    init_var: f64,
    pub time_index: i64,
    mean: Vec<f64>,
    var: f64,
}

impl MvOuLawStream {
    pub fn new(params: &MvOuParams, grid: &TimeGrid, init: &InitLaw, time_index: i64, scheme: LawScheme) -> Result<Self> {
        if params.a <= params.b {
            return Err(Error::NotContractive(format!("a - b = {} <= 0", params.a - params.b)));
        }
        Ok(Self {
            params: params.clone(),
            grid: grid.clone(),
            scheme,
            start: time_index,
            init_mean: init.mean().to_vec(),
            init_var: init.variance(),
            time_index,
            mean: init.mean().to_vec(),
            var: init.variance(),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    /// Mean and second moment; `abs_moment` is not tracked (NaN) because no
    /// consumer of this law reads it.
    pub fn stats(&self) -> MeasureStats {
        let d = self.mean.len();
        let m2: f64 = self.mean.iter().map(|m| m * m).sum();
        MeasureStats { mean: self.mean.clone(), abs_moment: f64::NAN, second_moment: m2 + d as f64 * self.var }
    }

    pub fn advance(&mut self) {
        let p = &self.params;
        let dt = self.grid.dt;
        match self.scheme {
            LawScheme::EulerConsistent => {
                let forcing = p.forcing(self.grid.phase_time(self.time_index));
                for m in &mut self.mean {
                    *m += dt * ((p.b - p.a) * *m + forcing);
                }
                self.var = (1.0 - p.a * dt).powi(2) * self.var + p.sigma0 * p.sigma0 * dt;
                self.time_index += 1;
            }
            LawScheme::Exact => {
                self.time_index += 1;
                let s = self.grid.time(self.start);
                let t = self.grid.time(self.time_index);
                for (m, m0) in self.mean.iter_mut().zip(&self.init_mean) {
                    *m = mv_ou_mean_path(p, *m0, s, t).expect("contractive by construction");
                }
                self.var = mv_ou_variance_path(p, self.init_var, s, t);
            }
        }
    }
}

/// Endpoints of interacting runs started `k` periods before a common target time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullbackRun {
    pub t_target: f64,
    pub horizons: Vec<usize>,
    pub endpoints: Vec<Ensemble>,
    /// `gaps[j]`: mean squared particle-wise distance between the endpoints of
    /// horizons `j` and `j + 1`.
    pub gaps: Vec<f64>,
}

/// Pull-back construction. Every run ends at grid step `target_step` and the
/// run with horizon `k` starts at `target_step − k·m`; all runs read the same
/// absolute-indexed increments, so they differ only through their start.
/// The initial draw for horizon `k` is keyed by `k` itself.
pub fn pullback_run(
    scenario: &Scenario,
    grid: &TimeGrid,
    target_step: i64,
    horizons: &[usize],
    init: &InitLaw,
    n: usize,
    noise: &NoiseBundle,
) -> Result<PullbackRun> {
    grid.check_aligned(scenario.tau())?;
    if horizons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("horizons must be non-decreasing".into()));
    }
    let m = grid.period_steps as i64;
    let integrator = Integrator::new(scenario, grid, noise);
    let endpoints = horizons
        .iter()
        .map(|&k| {
            let start = target_step - k as i64 * m;
            let ens = init.sample(n, noise.seed(), k as i64, start)?;
            integrator.run_to_end(&ens, k * grid.period_steps)
        })
        .collect::<Result<Vec<_>>>()?;
    let gaps = endpoints
        .windows(2)
        .map(|w| w[0].paired_sq_gap(&w[1]))
        .collect::<Result<Vec<_>>>()?;
    Ok(PullbackRun { t_target: grid.time(target_step), horizons: horizons.to_vec(), endpoints, gaps })
}

/// Per-snapshot moments for the JSON summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMoments {
    pub step: i64,
    pub t: f64,
    pub mean: Vec<f64>,
    pub second_moment: f64,
}

pub fn snapshot_moments(grid: &TimeGrid, snapshots: &[Ensemble]) -> Result<Vec<SnapshotMoments>> {
    snapshots
        .iter()
        .map(|e| {
            let st = compute_stats(e)?;
            Ok(SnapshotMoments { step: e.time_index, t: grid.time(e.time_index), mean: st.mean, second_moment: st.second_moment })
        })
        .collect()
}

/// Long-format CSV (`run_id,t,particle,component,value`).
pub fn snapshots_csv(run_id: &str, grid: &TimeGrid, snapshots: &[Ensemble]) -> String {
    let mut out = String::from("run_id,t,particle,component,value\n");
    for e in snapshots {
        let t = grid.time(e.time_index);
        for (i, row) in e.rows().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out.push_str(&format!("{run_id},{t:.16e},{i},{c},{v:.16e}\n"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Interaction, PartialParams, Potential, SigmaHat};

    fn mv_ou(a: f64, b: f64, amplitude: f64, sigma0: f64) -> Scenario {
        Scenario::mv_ou_custom(MvOuParams { a, b, amplitude, sigma0, tau: 1.0, dim: 1 }).unwrap()
    }

    #[test]
    fn geometric_recursion() {
        let s = mv_ou(1.25, 0.25, 0.0, 0.0);
        let grid = TimeGrid::aligned(1.0, 0.1, 1.0, 0.0).unwrap();
        let noise = NoiseBundle::new(1, 1, 0.1);
        let init = Ensemble::filled(1, 1, 1.0, 0).unwrap();
        let end = Integrator::new(&s, &grid, &noise).run_to_end(&init, 10).unwrap();
        assert!((end.states()[0] - 0.9f64.powi(10)).abs() < 1e-14);
        assert!((end.states()[0] - 0.3487).abs() < 1e-4);
    }

    #[test]
    fn zero_coefficients_leave_ensemble_unchanged() {
        let s = mv_ou(0.0, 0.0, 0.0, 0.0);
        let grid = TimeGrid::aligned(1.0, 0.01, 1.0, 0.0).unwrap();
        let noise = NoiseBundle::new(1, 1, 0.01);
        let init = Ensemble::new(3, 1, vec![-1.0, 0.5, 2.0], 0).unwrap();
        let next = em_step(&s, &grid, &init, &noise).unwrap();
        assert_eq!(next.states(), init.states());
        assert_eq!(next.time_index, 1);
    }

    #[test]
    fn pairwise_mean_field_sum_includes_self() {
        let s = Scenario::partial_custom(PartialParams {
            potential: Potential::Flat,
            interaction: Interaction::Linear,
            k2: 1.0,
            alpha: crate::models::AlphaProfile { base: 1.0, amplitude: 0.0 },
            sigma_hat: SigmaHat::Constant { scale: 0.0 },
            ..PartialParams::double_well_default()
        })
        .unwrap();
        let grid = TimeGrid::aligned(1.0, 0.1, 1.0, 0.0).unwrap();
        let init = Ensemble::new(2, 1, vec![0.0, 2.0], 0).unwrap();
        let next = em_step(&s, &grid, &init, &NoiseBundle::silent(1, 0.1)).unwrap();
        assert!((next.states()[0] - 0.1).abs() < 1e-15);
        assert!((next.states()[1] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported_with_step_and_particle() {
        let s = mv_ou(-50.0, 0.0, 0.0, 0.0);
        let grid = TimeGrid::aligned(1.0, 0.1, 1.0, 0.0).unwrap();
        let noise = NoiseBundle::silent(1, 0.1);
        let init = Ensemble::new(2, 1, vec![0.0, 1.0], 0).unwrap();
        let err = Integrator::new(&s, &grid, &noise).run_to_end(&init, 100).unwrap_err();
        match err {
            Error::DivergenceDetected { step, particle, .. } => {
                assert_eq!(particle, 1);
                // x_k = 6^k, and 6^11 is the first power above 1e8
                assert_eq!(step, 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn snapshot_zero_returns_init() {
        let s = mv_ou(1.0, 0.25, 1.0, 0.2);
        let grid = TimeGrid::aligned(1.0, 0.01, 2.0, 0.0).unwrap();
        let noise = NoiseBundle::new(3, 1, 0.01);
        let init = Ensemble::filled(4, 1, 0.3, 0).unwrap();
        let snaps = simulate(&s, &grid, &init, &noise, &[0]).unwrap();
        assert_eq!(snaps, vec![init]);
    }

    #[test]
    fn euler_consistent_law_matches_large_ensemble_mean() {
        let p = MvOuParams { a: 1.0, b: 0.25, amplitude: 1.0, sigma0: 0.0, tau: 1.0, dim: 1 };
        let s = Scenario::mv_ou_custom(p.clone()).unwrap();
        let grid = TimeGrid::aligned(1.0, 0.01, 1.0, 0.0).unwrap();
        let init = InitLaw::point(&[0.7]);
        let mut law = MvOuLawStream::new(&p, &grid, &init, 0, LawScheme::EulerConsistent).unwrap();
        let mut ens = init.sample(3, 0, 0, 0).unwrap();
        let noise = NoiseBundle::silent(1, 0.01);
        let integ = Integrator::new(&s, &grid, &noise);
        let mut buf = Vec::new();
        for _ in 0..100 {
            integ.step_in_place(&mut ens, None, &mut buf).unwrap();
            law.advance();
        }
        assert!((ens.states()[0] - law.mean()[0]).abs() < 1e-14);
    }
}
