//! Randomized spot-checks of the coefficient contracts.

use serde::{Deserialize, Serialize};

use super::{stats_of, Diffusion, MeasureView, Scenario};
use crate::ensemble::sq_dist;
use crate::error::{Error, Result};
use crate::noise::uniform_draw;

const STATE_RANGE: f64 = 3.0;
const SLACK: f64 = 1e-9;

/// Outcome of a randomized inequality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotCheck {
    pub tuples: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen (negative when every tuple passed).
    pub max_excess: f64,
    /// Time (reduced mod τ) of the worst tuple.
    pub worst_t: f64,
}

impl SpotCheck {
    fn new() -> Self {
        Self { tuples: 0, violations: 0, max_excess: f64::NEG_INFINITY, worst_t: f64::NAN }
    }

    fn record(&mut self, t: f64, excess: f64) {
        self.tuples += 1;
        if excess > 0.0 {
            self.violations += 1;
        }
        if excess > self.max_excess {
            self.max_excess = excess;
            self.worst_t = t;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

struct Draws {
    seed: u64,
    stream: u64,
    counter: u64,
}

impl Draws {
    fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream, counter: 0 }
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.counter += 1;
        lo + (hi - lo) * uniform_draw(self.seed, self.stream, self.counter)
    }

    fn point(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.uniform(-STATE_RANGE, STATE_RANGE)).collect()
    }
}

fn diffusion_sq_gap(a: &Diffusion, b: &Diffusion) -> f64 {
    match (a, b) {
        (Diffusion::Full(x), Diffusion::Full(y)) => sq_dist(x, y),
        (
            Diffusion::Split { additive: sa, multiplicative: ma },
            Diffusion::Split { additive: sb, multiplicative: mb },
        ) => (sa - sb).powi(2) + sq_dist(ma, mb),
        _ => f64::NAN,
    }
}

/// `W₂²` between two equal-weight two-point measures (an optimal plan is a
/// permutation, so comparing both pairings is exact).
fn two_point_w2_sq(p: &[f64], q: &[f64], d: usize) -> f64 {
    let (p1, p2) = p.split_at(d);
    let (q1, q2) = q.split_at(d);
    let straight = sq_dist(p1, q1) + sq_dist(p2, q2);
    let swapped = sq_dist(p1, q2) + sq_dist(p2, q1);
    0.5 * straight.min(swapped)
}

/// Maximum over a time grid and a fixed set of states of the change in
/// drift and diffusion under `t ↦ t + τ`.
pub fn periodicity_defect(s: &Scenario, n_times: usize, n_states: usize) -> Result<f64> {
    let d = s.dim();
    let tau = s.tau();
    let mut draws = Draws::new(0x0123_4567, 1);
    let reference: Vec<f64> = (0..16).flat_map(|_| draws.point(d)).collect();
    let stats = stats_of(&reference, d)?;
    let mu = MeasureView::with_samples(&stats, &reference);
    let mut worst: f64 = 0.0;
    for i in 0..n_times {
        let t = -3.0 * tau + 7.0 * tau * i as f64 / n_times as f64;
        for _ in 0..n_states {
            let x = draws.point(d);
            let b0 = s.eval_drift(t, &x, &mu)?;
            let b1 = s.eval_drift(t + tau, &x, &mu)?;
            worst = worst.max(sq_dist(&b0, &b1).sqrt());
            let s0 = s.eval_diffusion(t, &x, &mu)?;
            let s1 = s.eval_diffusion(t + tau, &x, &mu)?;
            worst = worst.max(diffusion_sq_gap(&s0, &s1).sqrt());
        }
    }
    Ok(worst)
}

/// One-sided Lipschitz inequality
/// `2⟨x−y, b(x,μ)−b(y,ν)⟩ + ‖σ(x,μ)−σ(y,ν)‖² ≤ K₁|x−y|² + K₂W₂(μ,ν)²`
/// on random `(t, x, y, μ, ν)` with two-point measures. Violations are counted,
/// never clipped.
pub fn dissipativity_spot_check(s: &Scenario, tuples: usize, seed: u64) -> Result<SpotCheck> {
    if s.dissipativity(0.0).is_none() {
        return Err(Error::WrongRegime { expected: "fully dissipative" });
    }
    let d = s.dim();
    let tau = s.tau();
    let mut draws = Draws::new(seed, 2);
    let mut out = SpotCheck::new();
    for _ in 0..tuples {
        let t = draws.uniform(0.0, tau);
        let x = draws.point(d);
        let y = draws.point(d);
        let p: Vec<f64> = [draws.point(d), draws.point(d)].concat();
        let q: Vec<f64> = [draws.point(d), draws.point(d)].concat();
        let (sp, sq) = (stats_of(&p, d)?, stats_of(&q, d)?);
        let mu = MeasureView::with_samples(&sp, &p);
        let nu = MeasureView::with_samples(&sq, &q);
        let bx = s.eval_drift(t, &x, &mu)?;
        let by = s.eval_drift(t, &y, &nu)?;
        let inner: f64 = x.iter().zip(&y).zip(bx.iter().zip(&by)).map(|((xi, yi), (u, v))| (xi - yi) * (u - v)).sum();
        let sigma_gap = diffusion_sq_gap(&s.eval_diffusion(t, &x, &mu)?, &s.eval_diffusion(t, &y, &nu)?);
        let (k1, k2, _) = s.dissipativity(t).expect("checked above");
        let lhs = 2.0 * inner + sigma_gap;
        let rhs = k1 * sq_dist(&x, &y) + k2 * two_point_w2_sq(&p, &q, d) + SLACK;
        out.record(t, lhs - rhs);
    }
    Ok(out)
}

/// `|b̃(x,y) − b̃(x̃,ỹ)| ≤ K₂ α_t (|x−x̃| + |y−ỹ|)` on random tuples.
pub fn interaction_lipschitz_check(s: &Scenario, tuples: usize, seed: u64) -> Result<SpotCheck> {
    let p = s.partial().ok_or(Error::WrongRegime { expected: "partially dissipative" })?;
    let d = p.dim;
    let mut draws = Draws::new(seed, 3);
    let mut out = SpotCheck::new();
    let (mut u, mut v) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..tuples {
        let t = draws.uniform(0.0, p.tau);
        let (x, y, xt, yt) = (draws.point(d), draws.point(d), draws.point(d), draws.point(d));
        p.b_tilde_into(t, &x, &y, &mut u);
        p.b_tilde_into(t, &xt, &yt, &mut v);
        let alpha = p.alpha.at(t, p.tau);
        let lhs = sq_dist(&u, &v).sqrt();
        let rhs = p.k2 * alpha * (sq_dist(&x, &xt).sqrt() + sq_dist(&y, &yt).sqrt()) + SLACK;
        out.record(t, lhs - rhs);
    }
    Ok(out)
}

/// Smallest sampled `α_t` over one period.
pub fn min_alpha(s: &Scenario, samples: usize) -> Option<f64> {
    let tau = s.tau();
    (0..samples)
        .map(|i| s.alpha(tau * i as f64 / samples as f64))
        .try_fold(f64::INFINITY, |m, a| a.map(|a| m.min(a)))
}
