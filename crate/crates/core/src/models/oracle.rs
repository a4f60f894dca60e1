//! Closed forms for the mean-field Ornstein-Uhlenbeck scenario.

use super::MvOuParams;
use crate::error::{Error, Result};

fn contraction(p: &MvOuParams) -> Result<f64> {
    let gap = p.a - p.b;
    if gap > 0.0 {
        Ok(gap)
    } else {
        Err(Error::NotContractive(format!("a - b = {gap} <= 0")))
    }
}

/// The unique τ-periodic solution of `m' = (b − a) m + A sin(ωt)`.
pub fn oracle_periodic_mean(p: &MvOuParams, t: f64) -> Result<f64> {
    let gap = contraction(p)?;
    let w = p.omega();
    let (s, c) = (w * t).sin_cos();
    Ok(p.amplitude * (gap * s - w * c) / (gap * gap + w * w))
}

/// Mean at time `t` of the solution started with mean `m0` at time `s`.
pub fn mv_ou_mean_path(p: &MvOuParams, m0: f64, s: f64, t: f64) -> Result<f64> {
    let gap = contraction(p)?;
    let periodic = |u| oracle_periodic_mean(p, u);
    Ok(periodic(t)? + (m0 - periodic(s)?) * (-gap * (t - s)).exp())
}

/// Per-component variance at time `t` of the solution started with variance
/// `v0` at time `s`; the mean interaction does not affect it.
pub fn mv_ou_variance_path(p: &MvOuParams, v0: f64, s: f64, t: f64) -> f64 {
    let stationary = p.sigma0 * p.sigma0 / (2.0 * p.a);
    stationary + (v0 - stationary) * (-2.0 * p.a * (t - s)).exp()
}

/// `max_t |m*''(t)|`.
pub fn mv_ou_second_derivative_bound(p: &MvOuParams) -> Result<f64> {
    let gap = contraction(p)?;
    let w = p.omega();
    Ok(w * w * p.amplitude.abs() / (gap * gap + w * w).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, b: f64, amplitude: f64) -> MvOuParams {
        MvOuParams { a, b, amplitude, ..MvOuParams::default() }
    }

    #[test]
    fn zero_forcing_gives_zero_mean() {
        let p = params(1.0, 0.25, 0.0);
        for i in 0..10 {
            assert_eq!(oracle_periodic_mean(&p, i as f64 * 0.1).unwrap(), 0.0);
        }
    }

    #[test]
    fn rejects_non_contractive_mean() {
        assert!(matches!(oracle_periodic_mean(&params(1.0, 1.0, 1.0), 0.0), Err(Error::NotContractive(_))));
    }

    #[test]
    fn mean_path_relaxes_to_periodic_mean() {
        let p = params(1.0, 0.25, 1.0);
        let far = mv_ou_mean_path(&p, 5.0, 0.0, 40.0).unwrap();
        assert!((far - oracle_periodic_mean(&p, 40.0).unwrap()).abs() < 1e-12);
        assert_eq!(mv_ou_mean_path(&p, 5.0, 1.3, 1.3).unwrap(), 5.0);
    }
}
