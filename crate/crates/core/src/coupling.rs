//! Mixed reflection/synchronous coupling of two split-noise particle systems.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{norm, tree_sum, Ensemble};
use crate::error::{Error, Result};
use crate::ips::add_mat_vec;
use crate::models::{admissible_k2, lemma_constants, Lemma, MeasureView, OwnedLaw, Scenario};
use crate::noise::{Driver, NoiseBundle, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    ReflectionMixed,
    SynchronousOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub eps: f64,
    pub mode: CouplingMode,
}

impl CouplingConfig {
    pub fn new(eps: f64, mode: CouplingMode) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("cut-off width must be positive, got {eps}")));
        }
        Ok(Self { eps, mode })
    }

    /// `eps = 0.01·ℓ₀`, or `0.01` when `ℓ₀ = 0`.
    pub fn default_for(s: &Scenario) -> Result<Self> {
        let p = s.partial().ok_or(Error::WrongRegime { expected: "partially dissipative" })?;
        let eps = if p.l0 > 0.0 { 1e-2 * p.l0 } else { 1e-2 };
        Self::new(eps, CouplingMode::ReflectionMixed)
    }
}

/// C¹ cut-off: 0 below `5ε/8`, 1 above `7ε/8`, a cubic in between.
pub fn cutoff_phi(eps: f64, r: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("r must be non-negative, got {r}")));
    }
    Ok(cutoff_unchecked(eps, r))
}

#[inline]
fn cutoff_unchecked(eps: f64, r: f64) -> f64 {
    if r <= 0.625 * eps {
        0.0
    } else if r >= 0.875 * eps {
        1.0
    } else {
        let u = r - 0.875 * eps;
        1.0 - 384.0 / (eps * eps * eps) * (u / 3.0 + eps / 8.0) * u * u
    }
}

/// Householder reflection `I − 2nnᵀ` along `z`, identity at `z = 0`.
pub fn reflection_matrix(z: &[f64]) -> Vec<f64> {
    let d = z.len();
    let r = norm(z);
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    if r > 0.0 {
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] -= 2.0 * z[i] * z[j] / (r * r);
            }
        }
    }
    m
}

/// `f(r) = c₁r + (1 − e^{−c₂r})/c₂`.
pub fn concave_distance(c1: f64, c2: f64, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("r must be non-negative, got {r}")));
    }
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Domain(format!("c1, c2 must be positive, got {c1}, {c2}")));
    }
    Ok(f_unchecked(c1, c2, r))
}

#[inline]
fn f_unchecked(c1: f64, c2: f64, r: f64) -> f64 {
    // -expm1 keeps precision for small c₂r
    c1 * r - (-c2 * r).exp_m1() / c2
}

/// Constants of one contraction argument plus the admissible `K₂` threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaConstants {
    pub lemma: Lemma,
    pub c1: f64,
    pub c2: f64,
    pub c_star: f64,
    pub k2_star: Option<f64>,
}

pub fn contraction_constants(s: &Scenario, lemma: Lemma) -> Result<LemmaConstants> {
    let p = s.partial().ok_or(Error::WrongRegime { expected: "partially dissipative" })?;
    let c = lemma_constants(p.k0, p.k1, p.k2, p.l0, lemma);
    Ok(LemmaConstants { lemma, c1: c.c1, c2: c.c2, c_star: c.c_star, k2_star: admissible_k2(p.k0, p.k1, p.l0).ok() })
}

/// Two ensembles whose particles are coupled index by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub a: Ensemble,
    pub b: Ensemble,
}

impl CoupledPair {
    pub fn new(a: Ensemble, b: Ensemble) -> Result<Self> {
        a.check_same_shape(&b)?;
        if a.time_index != b.time_index {
            return Err(Error::InvalidParameter(format!(
                "marginals at different steps: {} vs {}",
                a.time_index, b.time_index
            )));
        }
        Ok(Self { a, b })
    }

    pub fn time_index(&self) -> i64 {
        self.a.time_index
    }

    fn gaps(&self) -> Vec<f64> {
        self.a.rows().zip(self.b.rows()).map(|(x, y)| crate::ensemble::sq_dist(x, y).sqrt()).collect()
    }
}

/// `N⁻¹ Σ f(|aᵢ − bᵢ|)`.
pub fn mean_f_distance(pair: &CoupledPair, c1: f64, c2: f64) -> f64 {
    let values: Vec<f64> = pair.gaps().into_iter().map(|r| f_unchecked(c1, c2, r)).collect();
    tree_sum(&values) / pair.a.n() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDiagnostics {
    pub mean_f_distance: f64,
    pub mean_abs_gap: f64,
    /// Share of pairs with `φ > 1/2`.
    pub fraction_reflecting: f64,
}

pub fn diagnostics(pair: &CoupledPair, c1: f64, c2: f64, config: &CouplingConfig) -> CouplingDiagnostics {
    let gaps = pair.gaps();
    let n = gaps.len() as f64;
    let f: Vec<f64> = gaps.iter().map(|&r| f_unchecked(c1, c2, r)).collect();
    let reflecting = match config.mode {
        CouplingMode::SynchronousOnly => 0,
        CouplingMode::ReflectionMixed => gaps.iter().filter(|&&r| cutoff_unchecked(config.eps, r) > 0.5).count(),
    };
    CouplingDiagnostics {
        mean_f_distance: tree_sum(&f) / n,
        mean_abs_gap: tree_sum(&gaps) / n,
        fraction_reflecting: reflecting as f64 / n,
    }
}

/// Measure arguments for the two marginals; `None` uses the marginal's own
/// empirical measure.
#[derive(Clone, Copy, Default)]
pub struct PairLaws<'a> {
    pub a: Option<&'a MeasureView<'a>>,
    pub b: Option<&'a MeasureView<'a>>,
}

struct PairScratch {
    drift: Vec<f64>,
    matrix: Vec<f64>,
    star: Vec<f64>,
    hat: Vec<f64>,
    dw: Vec<f64>,
}

/// One step of the coupled pair. Marginal `a` receives
/// `√α(√φ ΔB* + √(1−φ) ΔB̂)`, marginal `b` the same with `ΔB*` reflected
/// by `Π(aᵢ − bᵢ)`; both receive `σ̂(·) ΔW`. `φ` is read off the pre-step gap.
pub fn coupled_step(
    s: &Scenario,
    grid: &TimeGrid,
    pair: &CoupledPair,
    noise: &NoiseBundle,
    config: &CouplingConfig,
    laws: PairLaws<'_>,
) -> Result<CoupledPair> {
    let p = s.partial().ok_or(Error::WrongRegime { expected: "partially dissipative" })?;
    let d = pair.a.d();
    if d != p.dim || noise.dim() != d {
        return Err(Error::Dimension(format!("pair d = {d}, scenario d = {}, noise d = {}", p.dim, noise.dim())));
    }
    let k = pair.time_index();
    let t = grid.phase_time(k);
    let dt = grid.dt;
    let root_alpha = p.alpha.at(t, p.tau).sqrt();
    let (own_a, own_b);
    let view_a = match laws.a {
        Some(v) => *v,
        None => {
            own_a = OwnedLaw::from_ensemble(s, &pair.a)?;
            own_a.view()
        }
    };
    let view_b = match laws.b {
        Some(v) => *v,
        None => {
            own_b = OwnedLaw::from_ensemble(s, &pair.b)?;
            own_b.view()
        }
    };
    let with_w = !p.sigma_hat_is_zero() && !noise.is_silent();
    let (old_a, old_b) = (pair.a.states(), pair.b.states());
    let mut next_a = vec![0.0; old_a.len()];
    let mut next_b = vec![0.0; old_b.len()];
    next_a
        .par_chunks_mut(d)
        .zip(next_b.par_chunks_mut(d))
        .enumerate()
        .with_min_len(32)
        .try_for_each_init(
            || PairScratch {
                drift: vec![0.0; d],
                matrix: vec![0.0; d * d],
                star: vec![0.0; d],
                hat: vec![0.0; d],
                dw: vec![0.0; d],
            },
            |buf, (i, (out_a, out_b))| -> Result<()> {
                let x = &old_a[i * d..(i + 1) * d];
                let y = &old_b[i * d..(i + 1) * d];
                s.drift_into(t, x, &view_a, &mut buf.drift)?;
                for ((o, xi), b) in out_a.iter_mut().zip(x).zip(&buf.drift) {
                    *o = xi + b * dt;
                }
                s.drift_into(t, y, &view_b, &mut buf.drift)?;
                for ((o, yi), b) in out_b.iter_mut().zip(y).zip(&buf.drift) {
                    *o = yi + b * dt;
                }
                if noise.is_silent() {
                    return Ok(());
                }
                let mut r2 = 0.0;
                for c in 0..d {
                    r2 += (x[c] - y[c]) * (x[c] - y[c]);
                }
                let r = r2.sqrt();
                let phi = match config.mode {
                    CouplingMode::SynchronousOnly => 0.0,
                    CouplingMode::ReflectionMixed => cutoff_unchecked(config.eps, r),
                };
                noise.increment_into(Driver::BHat, i, k, &mut buf.hat);
                let (w_star, w_hat) = (root_alpha * phi.sqrt(), root_alpha * (1.0 - phi).sqrt());
                if phi > 0.0 {
                    noise.increment_into(Driver::BStar, i, k, &mut buf.star);
                    // Π(z)v = v − 2 n ⟨n, v⟩ with n = z/|z|; φ > 0 implies r > 0
                    let proj: f64 = (0..d).map(|c| (x[c] - y[c]) * buf.star[c]).sum::<f64>() / r2;
                    for c in 0..d {
                        let reflected = buf.star[c] - 2.0 * (x[c] - y[c]) * proj;
                        out_a[c] += w_star * buf.star[c] + w_hat * buf.hat[c];
                        out_b[c] += w_star * reflected + w_hat * buf.hat[c];
                    }
                } else {
                    for c in 0..d {
                        out_a[c] += w_hat * buf.hat[c];
                        out_b[c] += w_hat * buf.hat[c];
                    }
                }
                if with_w {
                    noise.increment_into(Driver::W, i, k, &mut buf.dw);
                    p.sigma_hat_into(t, x, &mut buf.matrix);
                    add_mat_vec(&buf.matrix, &buf.dw, out_a);
                    p.sigma_hat_into(t, y, &mut buf.matrix);
                    add_mat_vec(&buf.matrix, &buf.dw, out_b);
                }
                Ok(())
            },
        )?;
    let a = Ensemble::new(pair.a.n(), d, next_a, k + 1)?;
    let b = Ensemble::new(pair.b.n(), d, next_b, k + 1)?;
    for e in [&a, &b] {
        if let Some((particle, magnitude)) = e.first_divergent(crate::ips::DEFAULT_GUARD) {
            return Err(Error::DivergenceDetected { step: k, particle, magnitude });
        }
    }
    Ok(CoupledPair { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AlphaProfile, Interaction, PartialParams, Potential, SigmaHat};

    fn free_scenario(d: usize) -> Scenario {
        Scenario::partial_custom(PartialParams {
            potential: Potential::Flat,
            interaction: Interaction::Linear,
            k2: 0.0,
            alpha: AlphaProfile { base: 1.0, amplitude: 0.0 },
            sigma_hat: SigmaHat::Constant { scale: 0.0 },
            dim: d,
            ..PartialParams::double_well_default()
        })
        .unwrap()
    }

    #[test]
    fn reflection_doubles_noise_on_the_difference_far_apart() {
        let s = free_scenario(1);
        let grid = TimeGrid::aligned(1.0, 0.01, 1.0, 0.0).unwrap();
        let noise = NoiseBundle::new(5, 1, 0.01);
        let pair = CoupledPair::new(
            Ensemble::new(2, 1, vec![1.0, -0.3], 0).unwrap(),
            Ensemble::new(2, 1, vec![0.0, 0.7], 0).unwrap(),
        )
        .unwrap();
        let cfg = CouplingConfig::new(0.1, CouplingMode::ReflectionMixed).unwrap();
        let next = coupled_step(&s, &grid, &pair, &noise, &cfg, PairLaws::default()).unwrap();
        for i in 0..2 {
            let z0 = pair.a.states()[i] - pair.b.states()[i];
            let z1 = next.a.states()[i] - next.b.states()[i];
            let db = noise.increment(Driver::BStar, i, 0)[0];
            assert!((z1 - (z0 + 2.0 * db)).abs() < 1e-14);
        }
    }

    #[test]
    fn close_pairs_move_synchronously() {
        let s = free_scenario(2);
        let grid = TimeGrid::aligned(1.0, 0.01, 1.0, 0.0).unwrap();
        let noise = NoiseBundle::new(5, 2, 0.01);
        let pair = CoupledPair::new(
            Ensemble::new(1, 2, vec![0.01, 0.0], 0).unwrap(),
            Ensemble::new(1, 2, vec![0.0, 0.0], 0).unwrap(),
        )
        .unwrap();
        let cfg = CouplingConfig::new(1.0, CouplingMode::ReflectionMixed).unwrap();
        let next = coupled_step(&s, &grid, &pair, &noise, &cfg, PairLaws::default()).unwrap();
        let gap: Vec<f64> = next.a.states().iter().zip(next.b.states()).map(|(a, b)| a - b).collect();
        assert!((gap[0] - 0.01).abs() < 1e-15 && gap[1].abs() < 1e-15);
    }

    #[test]
    fn full_regime_is_rejected() {
        let s = Scenario::builtin_default("mv_ou_periodic").unwrap();
        let grid = TimeGrid::aligned(1.0, 0.01, 1.0, 0.0).unwrap();
        let e = Ensemble::filled(1, 1, 0.0, 0).unwrap();
        let pair = CoupledPair::new(e.clone(), e).unwrap();
        let cfg = CouplingConfig::new(0.1, CouplingMode::ReflectionMixed).unwrap();
        let err = coupled_step(&s, &grid, &pair, &NoiseBundle::new(1, 1, 0.01), &cfg, PairLaws::default());
        assert!(matches!(err, Err(Error::WrongRegime { .. })));
    }
}
