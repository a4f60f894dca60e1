//! Reproducible two-sided Brownian increments.
//!
//! Every increment is a pure function of `(seed, driver, particle, k, dt)`
//! where `k` is an absolute (signed) step index. Extending a run backwards in
//! time, or viewing the same path through a Wiener shift, never re-randomizes
//! anything that was already generated.

use rand::Rng;
use rand_core::SeedableRng;
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of the normal-sampling scheme, recorded in every run manifest.
pub const RNG_SCHEME: &str = "splitmix64-keyed-v2/ziggurat";

/// Relative tolerance used when deciding whether `dt` divides the period.
const ALIGN_TOL: f64 = 1e-9;

/// Independent Brownian families available to a particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Driver {
    /// Multiplicative noise (and the only noise in the fully dissipative regime).
    W,
    /// Additive noise of the split-noise regime.
    B,
    /// Reflected component of the coupled additive noise.
    BStar,
    /// Synchronous component of the coupled additive noise.
    BHat,
    /// Draws used to sample initial laws.
    Init,
}

impl Driver {
    fn tag(self) -> u64 {
        match self {
            Driver::W => 0x57,
            Driver::B => 0x42,
            Driver::BStar => 0x2a42,
            Driver::BHat => 0x5e42,
            Driver::Init => 0x1417,
        }
    }
}

/// Uniform time grid whose period is an exact whole number of steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub period_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize, period_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 || period_steps == 0 {
            return Err(Error::InvalidParameter(
                "n_steps and period_steps must be at least 1".into(),
            ));
        }
        Ok(Self { t0, dt, n_steps, period_steps })
    }

    /// Grid spanning `periods` whole periods of length `tau`, rejecting any
    /// `dt` that does not divide `tau` into an integer number of steps.
    pub fn aligned(tau: f64, dt: f64, periods: f64, t0: f64) -> Result<Self> {
        if !(tau > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParameter("tau and dt must be positive".into()));
        }
        let ratio = tau / dt;
        let m = ratio.round();
        if m < 1.0 || (ratio - m).abs() > ALIGN_TOL * ratio.max(1.0) {
            return Err(Error::GridNotAligned(format!(
                "dt = {dt} does not divide tau = {tau} (ratio {ratio})"
            )));
        }
        let period_steps = m as usize;
        let n_steps = (periods * m).round().max(1.0) as usize;
        // store dt so that period_steps * dt reproduces tau
        Self::new(t0, tau / m, n_steps, period_steps)
    }

    /// Period length as represented on the grid.
    pub fn tau(&self) -> f64 {
        self.period_steps as f64 * self.dt
    }

    /// Absolute time of step `k`.
    pub fn time(&self, k: i64) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Time used for coefficient evaluation at step `k`: the phase within the
    /// period is computed from the integer index so that steps `k` and
    /// `k + period_steps` see bitwise identical coefficient arguments.
    pub fn phase_time(&self, k: i64) -> f64 {
        let m = self.period_steps as i64;
        self.t0 + k.rem_euclid(m) as f64 * self.dt
    }

    pub fn is_aligned_with(&self, tau: f64) -> bool {
        (self.tau() - tau).abs() <= ALIGN_TOL * tau.abs().max(1.0)
    }

    pub fn check_aligned(&self, tau: f64) -> Result<()> {
        if self.is_aligned_with(tau) {
            Ok(())
        } else {
            Err(Error::GridNotAligned(format!(
                "period_steps * dt = {} but scenario period is {tau}",
                self.tau()
            )))
        }
    }
}

/// SplitMix64 output finalizer, used to fold the key tuple into one word.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_key(seed: u64, driver: Driver, particle: u64, k: i64) -> u64 {
    let mut h = mix64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ driver.tag());
    h = mix64(h ^ particle.wrapping_mul(0xd6e8_feb8_6659_fd93));
    mix64(h ^ (k as u64))
}

/// Derives an independent sub-seed (for replicas, reference runs, ...).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed ^ 0x5851_f42d_4c95_7f2d) ^ mix64(tag.wrapping_add(1)))
}

#[inline]
fn unit_closed(x: u64) -> f64 {
    // [0, 1)
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on `[0, 1)` keyed by `(seed, stream, counter)`; used for
/// randomized spot-checks and random projection directions.
pub fn uniform_draw(seed: u64, stream: u64, counter: u64) -> f64 {
    unit_closed(mix64(derive_seed(seed, stream) ^ mix64(counter.wrapping_add(0x2545_f491_4f6c_dd1d))))
}

/// Writes `sqrt(dt) * z` into `out`, with `z` standard normal and fully
/// determined by `(seed, driver, particle, k)`.
pub fn gaussian_increment_into(
    seed: u64,
    driver: Driver,
    particle: u64,
    k: i64,
    dt: f64,
    out: &mut [f64],
) {
    let mut rng = SplitMix64::seed_from_u64(stream_key(seed, driver, particle, k));
    let scale = dt.sqrt();
    for o in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *o = z * scale;
    }
}

pub fn gaussian_increment(
    seed: u64,
    driver: Driver,
    particle: u64,
    k: i64,
    dt: f64,
    d: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; d];
    gaussian_increment_into(seed, driver, particle, k, dt, &mut out);
    out
}

/// A realization `ω` of all drivers, optionally viewed through a Wiener shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBundle {
    seed: u64,
    dim: usize,
    dt: f64,
    /// Step offset applied to every index (Wiener shift, in steps).
    offset: i64,
    /// All increments are zero (deterministic skeleton runs).
    silent: bool,
}

impl NoiseBundle {
    pub fn new(seed: u64, dim: usize, dt: f64) -> Self {
        Self { seed, dim, dt, offset: 0, silent: false }
    }

    /// Bundle whose increments are identically zero.
    pub fn silent(dim: usize, dt: f64) -> Self {
        Self { seed: 0, dim, dt, offset: 0, silent: true }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn is_silent(&self) -> bool {
        self.silent
    }

    #[inline]
    pub fn increment_into(&self, driver: Driver, particle: usize, k: i64, out: &mut [f64]) {
        if self.silent {
            out.fill(0.0);
        } else {
            gaussian_increment_into(self.seed, driver, particle as u64, k + self.offset, self.dt, out);
        }
    }

    pub fn increment(&self, driver: Driver, particle: usize, k: i64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.increment_into(driver, particle, k, &mut out);
        out
    }

    /// `θ` applied `m_periods` times: the increment at `k` of the returned
    /// view is the increment at `k + m_periods * period_steps` of `self`.
    pub fn shifted(&self, m_periods: i64, period_steps: usize) -> NoiseBundle {
        let mut view = self.clone();
        view.offset += m_periods * period_steps as i64;
        view
    }

    /// Sum of increments over `[from, to)`, accumulated low index to high.
    pub fn increment_sum(&self, driver: Driver, particle: usize, from: i64, to: i64) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for j in from..to {
            self.increment_into(driver, particle, j, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        acc
    }

    /// Two-sided path value `ω(k·dt)` with `ω(0) = 0`.
    pub fn brownian_value(&self, driver: Driver, particle: usize, k: i64) -> Vec<f64> {
        if k >= 0 {
            self.increment_sum(driver, particle, 0, k)
        } else {
            let mut v = self.increment_sum(driver, particle, k, 0);
            v.iter_mut().for_each(|x| *x = -*x);
            v
        }
    }
}

pub fn wiener_shift(bundle: &NoiseBundle, m_periods: i64, period_steps: usize) -> NoiseBundle {
    bundle.shifted(m_periods, period_steps)
}

pub fn brownian_value(bundle: &NoiseBundle, driver: Driver, particle: usize, k: i64) -> Vec<f64> {
    bundle.brownian_value(driver, particle, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_are_deterministic() {
        let a = gaussian_increment(7, Driver::W, 3, -12, 0.01, 3);
        let b = gaussian_increment(7, Driver::W, 3, -12, 0.01, 3);
        assert_eq!(a, b);
        assert_ne!(a, gaussian_increment(7, Driver::B, 3, -12, 0.01, 3));
        assert_ne!(a, gaussian_increment(7, Driver::W, 4, -12, 0.01, 3));
        assert_ne!(a, gaussian_increment(8, Driver::W, 3, -12, 0.01, 3));
    }

    #[test]
    fn sample_mean_and_variance() {
        let n = 1_000_000;
        let mut sum = [0.0f64; 2];
        for k in 0..n {
            let z = gaussian_increment(11, Driver::W, 0, k, 1.0, 2);
            sum[0] += z[0];
            sum[1] += z[1];
        }
        for s in sum {
            assert!((s / n as f64).abs() < 3e-3, "mean {}", s / n as f64);
        }

        let dt = 0.01;
        let (mut s1, mut s2) = (0.0, 0.0);
        for k in 0..n {
            let z = gaussian_increment(12, Driver::B, 5, k, dt, 1)[0];
            s1 += z;
            s2 += z * z;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((var / dt - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shift_identity_and_group_property() {
        let bundle = NoiseBundle::new(99, 2, 0.1);
        let same = bundle.shifted(0, 10);
        assert_eq!(bundle.increment(Driver::W, 1, 4), same.increment(Driver::W, 1, 4));

        let back = bundle.shifted(1, 10).shifted(-1, 10);
        for k in -20..20 {
            assert_eq!(bundle.increment(Driver::W, 2, k), back.increment(Driver::W, 2, k));
        }
        let up = bundle.shifted(2, 10);
        assert_eq!(up.increment(Driver::B, 0, 3), bundle.increment(Driver::B, 0, 23));
    }

    #[test]
    fn brownian_value_conventions() {
        let b = NoiseBundle::new(5, 2, 0.25);
        assert_eq!(b.brownian_value(Driver::W, 0, 0), vec![0.0, 0.0]);

        let v5 = b.brownian_value(Driver::W, 0, 5);
        let v4 = b.brownian_value(Driver::W, 0, 4);
        let inc = b.increment(Driver::W, 0, 4);
        for i in 0..2 {
            assert!((v5[i] - v4[i] - inc[i]).abs() < 1e-15);
        }

        let vm3 = b.brownian_value(Driver::W, 0, -3);
        let s = b.increment_sum(Driver::W, 0, -3, 0);
        for i in 0..2 {
            assert_eq!(vm3[i] + s[i], 0.0);
        }
    }

    #[test]
    fn silent_bundle_is_zero() {
        let b = NoiseBundle::silent(3, 0.1);
        assert_eq!(b.increment(Driver::B, 7, 100), vec![0.0; 3]);
    }

    #[test]
    fn aligned_grid() {
        let g = TimeGrid::aligned(1.0, 1e-3, 30.0, 0.0).unwrap();
        assert_eq!(g.period_steps, 1000);
        assert_eq!(g.n_steps, 30_000);
        assert!(g.is_aligned_with(1.0));
        assert_eq!(g.phase_time(1234), g.phase_time(1234 + 1000));
        assert_eq!(g.phase_time(-1), g.phase_time(999));
        assert!(matches!(
            TimeGrid::aligned(1.0, 0.3, 3.0, 0.0),
            Err(Error::GridNotAligned(_))
        ));
        assert!(TimeGrid::new(0.0, 0.0, 1, 1).is_err());
    }
}
