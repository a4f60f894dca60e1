//! Coefficient sets, regime constants and closed-form oracles.

mod builtins;
pub mod checks;
mod constants;
mod oracle;

use serde::{Deserialize, Serialize};

use crate::ensemble::{norm, tree_sum, Ensemble};
use crate::error::{Error, Result};

pub use builtins::{
    AlphaProfile, Interaction, MvOuParams, ParamValue, PartialParams, PiecewiseK1Params,
    PiecewiseVariant, Potential, SigmaHat, BUILTIN_SCENARIOS,
};
pub use constants::{
    admissible_k2, lemma_constants, simpson, ContractionConstants, DerivedConstants, Lemma,
    K2_FLOOR, QUADRATURE_PANELS,
};
pub use oracle::{
    mv_ou_mean_path, mv_ou_second_derivative_bound, mv_ou_variance_path, oracle_periodic_mean,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    FullyDissipative,
    PartiallyDissipative,
}

/// What a drift or diffusion evaluation needs to know about the measure argument.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsRequirement {
    None,
    MeanOnly,
    AbsMoment,
    Pairwise,
}

/// Summary statistics of an (empirical) measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureStats {
    pub mean: Vec<f64>,
    /// `μ(|·|)`
    pub abs_moment: f64,
    /// `μ(|·|²)`
    pub second_moment: f64,
}

impl MeasureStats {
    pub fn zero(d: usize) -> Self {
        Self { mean: vec![0.0; d], abs_moment: 0.0, second_moment: 0.0 }
    }

    /// Stats of a Dirac mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        let r = norm(x);
        Self { mean: x.to_vec(), abs_moment: r, second_moment: r * r }
    }
}

/// Measure argument handed to coefficient evaluations: summary stats plus,
/// when available, the full sample (row-major `N×d`).
#[derive(Clone, Copy, Debug)]
pub struct MeasureView<'a> {
    pub stats: &'a MeasureStats,
    pub samples: Option<&'a [f64]>,
    /// `exp(2y)` for every entry of `samples`; lets the tanh kernel be
    /// evaluated as `(e^{2y}e^{-2x} − 1)/(e^{2y}e^{-2x} + 1)`.
    pub exp2: Option<&'a [f64]>,
}

impl<'a> MeasureView<'a> {
    pub fn stats_only(stats: &'a MeasureStats) -> Self {
        Self { stats, samples: None, exp2: None }
    }

    pub fn with_samples(stats: &'a MeasureStats, samples: &'a [f64]) -> Self {
        Self { stats, samples: Some(samples), exp2: None }
    }
}

/// Entries beyond this magnitude disable the cached tanh evaluation.
pub(crate) const EXP2_LIMIT: f64 = 40.0;

/// `exp(2y)` per entry, or `None` if any entry is too large for the cached
/// tanh evaluation to be accurate.
pub fn exp2_cache(samples: &[f64]) -> Option<Vec<f64>> {
    samples
        .iter()
        .map(|&y| (y.abs() <= EXP2_LIMIT).then(|| (2.0 * y).exp()))
        .collect()
}

/// Measure argument built from a sample, holding only what the scenario reads.
#[derive(Clone, Debug)]
pub struct OwnedLaw {
    pub stats: MeasureStats,
    samples: Option<Vec<f64>>,
    exp2: Option<Vec<f64>>,
}

impl OwnedLaw {
    pub fn from_samples(scenario: &Scenario, samples: &[f64], d: usize) -> Result<Self> {
        let req = scenario.stats_requirement();
        let stats = if req == StatsRequirement::None { MeasureStats::zero(d) } else { stats_of(samples, d)? };
        let (samples, exp2) = if req == StatsRequirement::Pairwise {
            let exp2 = if scenario.uses_tanh_kernel() { exp2_cache(samples) } else { None };
            (Some(samples.to_vec()), exp2)
        } else {
            (None, None)
        };
        Ok(Self { stats, samples, exp2 })
    }

    pub fn from_ensemble(scenario: &Scenario, e: &Ensemble) -> Result<Self> {
        Self::from_samples(scenario, e.states(), e.d())
    }

    pub fn from_stats(stats: MeasureStats) -> Self {
        Self { stats, samples: None, exp2: None }
    }

    pub fn view(&self) -> MeasureView<'_> {
        MeasureView { stats: &self.stats, samples: self.samples.as_deref(), exp2: self.exp2.as_deref() }
    }
}

/// Diffusion coefficient at a point.
#[derive(Clone, Debug, PartialEq)]
pub enum Diffusion {
    /// `σ_t(x, μ)` as a row-major `d×d` matrix, applied to `W`.
    Full(Vec<f64>),
    /// `(√α_t, σ̂_t(x))`, applied to the independent drivers `B` and `W`.
    Split { additive: f64, multiplicative: Vec<f64> },
}

pub fn compute_stats(ensemble: &Ensemble) -> Result<MeasureStats> {
    stats_of(ensemble.states(), ensemble.d())
}

/// Stats of the empirical measure of row-major samples, reduced with a fixed
/// pairwise tree so the result does not depend on the worker count.
pub fn stats_of(samples: &[f64], d: usize) -> Result<MeasureStats> {
    if d == 0 || samples.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let n = samples.len() / d;
    let inv = 1.0 / n as f64;
    let mut column = vec![0.0; n];
    let mut mean = Vec::with_capacity(d);
    for c in 0..d {
        for (i, v) in column.iter_mut().enumerate() {
            *v = samples[i * d + c];
        }
        mean.push(tree_sum(&column) * inv);
    }
    let mut norms = Vec::with_capacity(n);
    let mut squares = Vec::with_capacity(n);
    for row in samples.chunks_exact(d) {
        let sq: f64 = row.iter().map(|v| v * v).sum();
        squares.push(sq);
        norms.push(sq.sqrt());
    }
    Ok(MeasureStats {
        mean,
        abs_moment: tree_sum(&norms) * inv,
        second_moment: tree_sum(&squares) * inv,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScenarioKind {
    MvOu(MvOuParams),
    PiecewiseK1(PiecewiseK1Params),
    Partial(PartialParams),
}

/// An immutable, τ-periodic coefficient set together with its regime constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn regime(&self) -> Regime {
        match self.kind {
            ScenarioKind::MvOu(_) | ScenarioKind::PiecewiseK1(_) => Regime::FullyDissipative,
            ScenarioKind::Partial(_) => Regime::PartiallyDissipative,
        }
    }

    pub fn tau(&self) -> f64 {
        match &self.kind {
            ScenarioKind::MvOu(p) => p.tau,
            ScenarioKind::PiecewiseK1(p) => p.tau,
            ScenarioKind::Partial(p) => p.tau,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ScenarioKind::MvOu(p) => p.dim,
            ScenarioKind::PiecewiseK1(_) => 1,
            ScenarioKind::Partial(p) => p.dim,
        }
    }

    pub fn stats_requirement(&self) -> StatsRequirement {
        match &self.kind {
            ScenarioKind::MvOu(p) if p.b == 0.0 => StatsRequirement::None,
            ScenarioKind::MvOu(_) => StatsRequirement::MeanOnly,
            ScenarioKind::PiecewiseK1(p) if p.kappa == 0.0 => StatsRequirement::None,
            ScenarioKind::PiecewiseK1(_) => StatsRequirement::AbsMoment,
            ScenarioKind::Partial(p) => match p.interaction {
                _ if p.k2 == 0.0 => StatsRequirement::None,
                Interaction::Linear => StatsRequirement::MeanOnly,
                Interaction::Tanh => StatsRequirement::Pairwise,
            },
        }
    }

    pub fn uses_tanh_kernel(&self) -> bool {
        matches!(&self.kind, ScenarioKind::Partial(p) if p.interaction == Interaction::Tanh)
    }

    pub fn mv_ou(&self) -> Option<&MvOuParams> {
        match &self.kind {
            ScenarioKind::MvOu(p) => Some(p),
            _ => None,
        }
    }

    pub fn partial(&self) -> Option<&PartialParams> {
        match &self.kind {
            ScenarioKind::Partial(p) => Some(p),
            _ => None,
        }
    }

    fn phase(&self, t: f64) -> f64 {
        t.rem_euclid(self.tau())
    }

    /// Writes `b_t(x, μ)` (or `b̂_t(x) + (b̃_t * μ)(x)`) into `out`.
    pub fn drift_into(&self, t: f64, x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) -> Result<()> {
        let t = self.phase(t);
        match &self.kind {
            ScenarioKind::MvOu(p) => {
                let forcing = p.forcing(t);
                for ((o, xi), mi) in out.iter_mut().zip(x).zip(&mu.stats.mean) {
                    *o = -p.a * xi + p.b * mi + forcing;
                }
            }
            ScenarioKind::PiecewiseK1(p) => {
                let k1 = p.k1(t);
                let xi = x[0];
                let shape = if p.cubic_active(t) { xi * xi * xi + xi } else { xi };
                out[0] = k1 * shape + 0.5 * p.kappa * mu.stats.abs_moment;
            }
            ScenarioKind::Partial(p) => {
                p.b_hat_into(t, x, out);
                if p.k2 != 0.0 {
                    p.add_convolution(t, x, mu, out)?;
                }
            }
        }
        Ok(())
    }

    pub fn eval_drift(&self, t: f64, x: &[f64], mu: &MeasureView<'_>) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(t, x, mu, &mut out)?;
        Ok(out)
    }

    pub fn eval_diffusion(&self, t: f64, x: &[f64], mu: &MeasureView<'_>) -> Result<Diffusion> {
        let t = self.phase(t);
        let d = self.dim();
        match &self.kind {
            ScenarioKind::MvOu(_) | ScenarioKind::PiecewiseK1(_) => {
                let mut m = vec![0.0; d * d];
                self.full_diffusion_into(t, x, mu, &mut m);
                Ok(Diffusion::Full(m))
            }
            ScenarioKind::Partial(p) => {
                let mut m = vec![0.0; d * d];
                p.sigma_hat_into(t, x, &mut m);
                Ok(Diffusion::Split { additive: p.alpha.at(t, p.tau).sqrt(), multiplicative: m })
            }
        }
    }

    /// Row-major `σ_t(x, μ)` for the fully dissipative regime.
    pub fn full_diffusion_into(&self, _t: f64, _x: &[f64], mu: &MeasureView<'_>, out: &mut [f64]) {
        let d = self.dim();
        let scale = match &self.kind {
            ScenarioKind::MvOu(p) => p.sigma0,
            ScenarioKind::PiecewiseK1(p) => 0.5 * p.kappa * mu.stats.abs_moment,
            ScenarioKind::Partial(_) => 0.0,
        };
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = scale;
        }
    }

    /// `α_t` (partial regime only).
    pub fn alpha(&self, t: f64) -> Option<f64> {
        self.partial().map(|p| p.alpha.at(self.phase(t), p.tau))
    }

    /// Regime functions `(K₁(t), K₂(t), K₃(t))` of the fully dissipative regime.
    pub fn dissipativity(&self, t: f64) -> Option<(f64, f64, f64)> {
        let t = self.phase(t);
        match &self.kind {
            ScenarioKind::MvOu(p) => Some((-2.0 * p.a + p.b.abs(), p.b.abs(), 0.0)),
            ScenarioKind::PiecewiseK1(p) => Some((p.k1(t), p.kappa, 0.25 * p.kappa * p.kappa)),
            ScenarioKind::Partial(_) => None,
        }
    }

    pub fn derived_constants(&self) -> DerivedConstants {
        constants::derive(self)
    }

    /// Bound on the stationary second moment, where it is known in closed form.
    pub fn second_moment_bound(&self) -> Option<f64> {
        let p = self.mv_ou()?;
        if p.a <= p.b {
            return None;
        }
        let omega = std::f64::consts::TAU / p.tau;
        let amp = p.amplitude.abs() / ((p.a - p.b).powi(2) + omega * omega).sqrt();
        Some(p.dim as f64 * (amp * amp + p.sigma0 * p.sigma0 / (2.0 * p.a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn builtin(name: &str, pairs: &[(&str, ParamValue)]) -> Scenario {
        let overrides: BTreeMap<String, ParamValue> =
            pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        Scenario::builtin(name, &overrides).unwrap()
    }

    fn num(v: f64) -> ParamValue {
        ParamValue::Num(v)
    }

    #[test]
    fn mv_ou_drift_evaluation() {
        let s = builtin("mv_ou_periodic", &[("a", num(1.0)), ("b", num(0.25)), ("amplitude", num(1.0))]);
        let stats = MeasureStats::zero(1);
        let b = s.eval_drift(0.0, &[2.0], &MeasureView::stats_only(&stats)).unwrap();
        assert!((b[0] + 2.0).abs() < 1e-15);
    }

    // Independent evaluator of the piecewise K1 formula, written against the
    // three stated branches rather than the implementation's branch order.
    fn k1_reference(t: f64) -> f64 {
        let s = t - t.floor();
        if (0.0..=0.5).contains(&s) {
            -2.0 * s
        } else if s <= 0.75 {
            6.0 * s - 4.0
        } else {
            -2.0 * (s - 1.0)
        }
    }

    #[test]
    fn piecewise_drift_and_diffusion() {
        let s = builtin("piecewise_k1", &[("kappa", num(0.0))]);
        let stats = MeasureStats::zero(1);
        let b = s.eval_drift(0.25, &[1.0], &MeasureView::stats_only(&stats)).unwrap();
        assert!((b[0] - k1_reference(0.25) * 2.0).abs() < 1e-15);
        assert!((b[0] + 1.0).abs() < 1e-15);

        let s = builtin("piecewise_k1", &[("kappa", num(0.2))]);
        let stats = MeasureStats { mean: vec![0.0], abs_moment: 1.0, second_moment: 1.0 };
        match s.eval_diffusion(0.3, &[5.0], &MeasureView::stats_only(&stats)).unwrap() {
            Diffusion::Full(m) => assert!((m[0] - 0.1).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn piecewise_k1_matches_reference_on_grid() {
        let s = builtin("piecewise_k1", &[]);
        for i in 0..1000 {
            let t = i as f64 / 1000.0 * 3.0 - 1.0;
            let (k1, _, _) = s.dissipativity(t).unwrap();
            assert!((k1 - k1_reference(t)).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn piecewise_variants_differ_only_where_k1_positive() {
        let clamped = builtin("piecewise_k1", &[("kappa", num(0.0))]);
        let written = builtin("piecewise_k1", &[("kappa", num(0.0)), ("variant", ParamValue::Text("as_written".into()))]);
        let stats = MeasureStats::zero(1);
        let view = MeasureView::stats_only(&stats);
        let at = |s: &Scenario, t: f64| s.eval_drift(t, &[1.5], &view).unwrap()[0];
        assert_eq!(at(&clamped, 0.3), at(&written, 0.3));
        assert_eq!(at(&clamped, 0.9), at(&written, 0.9));
        assert!(at(&written, 0.7) > at(&clamped, 0.7));
    }

    // U(x) = x^2 g(x)^2 + a^2 - 2 a x g(x), written out independently.
    fn truncated_potential(x: f64, n: f64, a: f64) -> f64 {
        let g = x.clamp(-n, n);
        x * x * g * g + a * a - 2.0 * a * x * g
    }

    #[test]
    fn truncated_ou_drift_matches_finite_differences() {
        let s = builtin("truncated_ou", &[("n", num(2.0)), ("a", num(1.0)), ("alpha_amp", num(0.0)), ("k2", num(0.0))]);
        let stats = MeasureStats::zero(1);
        let view = MeasureView::stats_only(&stats);
        let b = s.eval_drift(0.0, &[3.0], &view).unwrap()[0];
        assert!((b + 20.0).abs() < 1e-12);
        for &x in &[-3.5, -1.2, -0.3, 0.4, 1.7, 2.5, 6.0] {
            let h = 1e-5;
            let fd = (truncated_potential(x + h, 2.0, 1.0) - truncated_potential(x - h, 2.0, 1.0)) / (2.0 * h);
            let b = s.eval_drift(0.0, &[x], &view).unwrap()[0];
            assert!((b + fd).abs() < 1e-5 * (1.0 + fd.abs()), "x={x}: {b} vs {}", -fd);
        }
    }

    #[test]
    fn double_well_diffusion_is_constant() {
        let s = builtin("double_well_partial", &[("dim", num(2.0))]);
        let stats = MeasureStats::zero(2);
        match s.eval_diffusion(0.25, &[3.0, -1.0], &MeasureView::stats_only(&stats)).unwrap() {
            Diffusion::Split { additive, multiplicative } => {
                assert!((additive - 1.5f64.sqrt()).abs() < 1e-15);
                assert_eq!(multiplicative, vec![0.1, 0.0, 0.0, 0.1]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pairwise_kernel_needs_samples() {
        let s = builtin("double_well_partial", &[]);
        assert_eq!(s.stats_requirement(), StatsRequirement::Pairwise);
        let stats = MeasureStats::zero(1);
        assert_eq!(
            s.eval_drift(0.0, &[0.5], &MeasureView::stats_only(&stats)),
            Err(Error::MissingStats)
        );
        let samples = [0.5, 1.5];
        let stats = stats_of(&samples, 1).unwrap();
        let b = s.eval_drift(0.0, &[0.5], &MeasureView::with_samples(&stats, &samples)).unwrap();
        let expected = -(0.125 - 0.5) + 0.1 * (0.0 + 1.0f64.tanh()) / 2.0;
        assert!((b[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn cached_tanh_matches_direct_evaluation() {
        let s = builtin("double_well_partial", &[("dim", num(2.0))]);
        let samples: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 * 0.3 - 3.0).collect();
        let direct = OwnedLaw { samples: Some(samples.clone()), ..OwnedLaw::from_stats(stats_of(&samples, 2).unwrap()) };
        let cached = OwnedLaw::from_samples(&s, &samples, 2).unwrap();
        assert!(cached.exp2.is_some());
        for x in [[0.3, -1.7], [2.5, 0.0], [-45.0, 1.0]] {
            let a = s.eval_drift(0.4, &x, &direct.view()).unwrap();
            let b = s.eval_drift(0.4, &x, &cached.view()).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-14 * (1.0 + u.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn linear_kernel_closed_form_matches_pairwise() {
        let s = Scenario::partial_custom(PartialParams {
            potential: Potential::Flat,
            interaction: Interaction::Linear,
            k2: 0.7,
            ..PartialParams::double_well_default()
        })
        .unwrap();
        let samples = [0.0, 2.0, -1.0, 4.0];
        let stats = stats_of(&samples, 1).unwrap();
        let closed = s.eval_drift(0.3, &[1.0], &MeasureView::stats_only(&stats)).unwrap();
        let pairwise = s.eval_drift(0.3, &[1.0], &MeasureView::with_samples(&stats, &samples)).unwrap();
        assert!((closed[0] - pairwise[0]).abs() < 1e-14);
    }

    #[test]
    fn stats_examples() {
        let e = Ensemble::new(2, 1, vec![-1.0, 1.0], 0).unwrap();
        let st = compute_stats(&e).unwrap();
        assert_eq!(st.mean, vec![0.0]);
        assert_eq!(st.abs_moment, 1.0);
        assert_eq!(st.second_moment, 1.0);

        let e = Ensemble::filled(3, 1, 0.0, 0).unwrap();
        assert_eq!(compute_stats(&e).unwrap(), MeasureStats::zero(1));
        assert_eq!(stats_of(&[], 1), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn half_normal_abs_moment() {
        let n = 100_000;
        let samples: Vec<f64> = (0..n)
            .map(|k| crate::noise::gaussian_increment(3, crate::noise::Driver::Init, 0, k, 1.0, 1)[0])
            .collect();
        let st = stats_of(&samples, 1).unwrap();
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((st.abs_moment / target - 1.0).abs() < 0.01);
    }
}
