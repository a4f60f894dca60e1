//! Least-squares rate fits, replica statistics and the sign test.

use serde::{Deserialize, Serialize};

use crate::ensemble::tree_sum;
use crate::error::{Error, Result};

/// `v ≈ C e^{−rate·x}` (exponential fits) or `v ≈ C x^{−rate}` (power laws).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    #[serde(rename = "C")]
    pub c: f64,
    pub rate: f64,
    /// Standard error of `rate` from the residual variance (0 for two-point or exact fits).
    pub rate_se: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch { left: x.len(), right: y.len() });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = tree_sum(x) / nf;
    let my = tree_sum(y) / nf;
    let sxx = tree_sum(&x.iter().map(|v| (v - mx) * (v - mx)).collect::<Vec<_>>());
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("abscissae must not all coincide".into()));
    }
    let sxy = tree_sum(&x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<Vec<_>>());
    let syy = tree_sum(&y.iter().map(|v| (v - my) * (v - my)).collect::<Vec<_>>());
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = tree_sum(&x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).collect::<Vec<_>>());
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_se = (ss_res / (nf - 2.0) / sxx).sqrt();
    Ok(LinearFit { intercept, slope, slope_se, r_squared, n_points: n })
}

fn logs(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value > 0.0 && value.is_finite() {
                Ok(value.ln())
            } else {
                Err(Error::NonPositiveValue { index, value })
            }
        })
        .collect()
}

/// Least squares on `(t, ln v)`; `rate = −slope`, `C = exp(intercept)`.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<RateFit> {
    let lf = fit_linear(times, &logs(values)?)?;
    Ok(RateFit { c: lf.intercept.exp(), rate: -lf.slope, rate_se: lf.slope_se, r_squared: lf.r_squared, n_points: lf.n_points })
}

/// Least squares on `(ln x, ln v)`; `rate = −slope`.
pub fn fit_power_law(x: &[f64], values: &[f64]) -> Result<RateFit> {
    let lx = logs(x)?;
    let lf = fit_linear(&lx, &logs(values)?)?;
    Ok(RateFit { c: lf.intercept.exp(), rate: -lf.slope, rate_se: lf.slope_se, r_squared: lf.r_squared, n_points: lf.n_points })
}

/// Mean and its standard error `sd/√n` over independent replicas.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = tree_sum(values) / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = tree_sum(&values.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>()) / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided exact binomial sign test of `P(residual > 0) = 1/2`; zeros are dropped.
pub fn sign_test(residuals: &[f64]) -> f64 {
    let pos = residuals.iter().filter(|&&r| r > 0.0).count();
    let neg = residuals.iter().filter(|&&r| r < 0.0).count();
    let n = pos + neg;
    if n == 0 {
        return 1.0;
    }
    let k = pos.min(neg);
    // P(X ≤ k) for X ~ Bin(n, 1/2), accumulated in log space
    let mut log_pmf = -(n as f64) * std::f64::consts::LN_2;
    let mut tail = log_pmf.exp();
    for i in 1..=k {
        log_pmf += ((n - i + 1) as f64 / i as f64).ln();
        tail += log_pmf.exp();
    }
    (2.0 * tail).min(1.0)
}

/// Theoretical propagation-of-chaos rate `φ(N)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub eps0: f64,
    pub d: usize,
}

impl RateModel {
    pub fn new(eps0: f64, d: usize) -> Result<Self> {
        if !(eps0 > 0.0 && eps0 < 1.0) {
            return Err(Error::InvalidParameter(format!("eps0 must lie in (0, 1), got {eps0}")));
        }
        Ok(Self { eps0, d })
    }
}

pub fn phi_rate(model: &RateModel, n: usize) -> f64 {
    let n = n as f64;
    let moment_term = n.powf(-model.eps0 / (2.0 + model.eps0));
    let dimension_term = match model.d {
        0..=3 => n.powf(-0.5),
        4 => n.powf(-0.5) * (1.0 + n).ln(),
        d => n.powf(-2.0 / d as f64),
    };
    dimension_term + moment_term
}
