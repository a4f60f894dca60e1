use serde::{Deserialize, Serialize};

use super::{PartialParams, Scenario, ScenarioKind};
use crate::error::{Error, Result};

/// Composite Simpson panels per period for `λ` and `ᾱ`.
pub const QUADRATURE_PANELS: usize = 10_000;

/// Smallest interaction constant the admissibility search will consider.
pub const K2_FLOOR: f64 = 1e-12;

const K2_SCAN_POINTS: usize = 2000;
const K2_REL_TOL: f64 = 1e-6;

/// Which contraction argument the constants `c₁, c₂, c*` belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    /// Coupling of two solutions of the nonlinear equation.
    Ergodicity,
    /// Coupling of the non-interacting and the interacting system.
    PropagationOfChaos,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c_star: f64,
}

impl ContractionConstants {
    /// Net contraction rate `c* − K₂(1+c₁)` for the ergodicity constants.
    pub fn ergodic_margin(&self, k2: f64) -> f64 {
        self.c_star - k2 * (1.0 + self.c1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// `−∫₀^τ (K₁ + K₂)`; fully dissipative regime only.
    pub lambda: Option<f64>,
    /// `τ⁻¹ ∫₀^τ α`; partial regime only.
    pub alpha_bar: Option<f64>,
    pub ergodicity: Option<ContractionConstants>,
    pub propagation_of_chaos: Option<ContractionConstants>,
    /// Largest admissible interaction constant, if any exists.
    pub k2_star: Option<f64>,
    pub quadrature_panels: usize,
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn lemma_constants(k0: f64, k1: f64, k2: f64, l0: f64, lemma: Lemma) -> ContractionConstants {
    match lemma {
        Lemma::Ergodicity => {
            let c2 = 2.0 * (k0 + k2) * l0;
            let c1 = (-c2 * l0).exp();
            let c_star = c1 * (2.0 * (k0 + k2)).min(k1 - k2) / (1.0 + c1);
            ContractionConstants { c1, c2, c_star }
        }
        Lemma::PropagationOfChaos => {
            let c2 = 2.0 * (k0 + k1) * l0;
            let c1 = (-c2 * l0).exp();
            ContractionConstants { c1, c2, c_star: k1 * c1 / (1.0 + c1) }
        }
    }
}

fn admissible(k0: f64, k1: f64, l0: f64, k2: f64) -> bool {
    if !(k2 > 0.0 && k2 < 0.5 * k1) {
        return false;
    }
    let erg = lemma_constants(k0, k1, k2, l0, Lemma::Ergodicity);
    let poc = lemma_constants(k0, k1, k2, l0, Lemma::PropagationOfChaos);
    erg.c_star > k2 * (1.0 + erg.c1) && poc.c_star > 2.0 * k2 / poc.c1
}

/// Largest `K₂ ∈ (0, K₁/2)` for which both lemma conditions hold.
///
/// A log-spaced scan from `K₁/2` downwards locates the first feasible point;
/// bisection against the neighbouring infeasible point then refines the
/// boundary to relative tolerance `1e-6`.
pub fn admissible_k2(k0: f64, k1: f64, l0: f64) -> Result<f64> {
    let upper = 0.5 * k1;
    if !(upper > K2_FLOOR) {
        return Err(Error::NoAdmissibleK2 { floor: K2_FLOOR });
    }
    let ratio = (K2_FLOOR / upper).ln();
    let at = |i: usize| upper * (ratio * i as f64 / K2_SCAN_POINTS as f64).exp();
    // i = 0 is the excluded endpoint K₁/2 itself
    let Some(first) = (1..=K2_SCAN_POINTS).find(|&i| admissible(k0, k1, l0, at(i))) else {
        return Err(Error::NoAdmissibleK2 { floor: K2_FLOOR });
    };
    let (mut lo, mut hi) = (at(first), at(first - 1));
    while hi - lo > K2_REL_TOL * lo {
        let mid = 0.5 * (lo + hi);
        if admissible(k0, k1, l0, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn partial_constants(p: &PartialParams) -> DerivedConstants {
    let alpha_bar = simpson(|t| p.alpha.at(t, p.tau), 0.0, p.tau, QUADRATURE_PANELS) / p.tau;
    DerivedConstants {
        lambda: None,
        alpha_bar: Some(alpha_bar),
        ergodicity: Some(lemma_constants(p.k0, p.k1, p.k2, p.l0, Lemma::Ergodicity)),
        propagation_of_chaos: Some(lemma_constants(p.k0, p.k1, p.k2, p.l0, Lemma::PropagationOfChaos)),
        k2_star: admissible_k2(p.k0, p.k1, p.l0).ok(),
        quadrature_panels: QUADRATURE_PANELS,
    }
}

/// `−∫₀^τ (K₁ + K₂)` at the given resolution.
pub(crate) fn lambda_with(s: &Scenario, panels: usize) -> Option<f64> {
    s.dissipativity(0.0)?;
    let integrand = |t: f64| {
        let (k1, k2, _) = s.dissipativity(t).expect("fully dissipative");
        k1 + k2
    };
    Some(-simpson(integrand, 0.0, s.tau(), panels))
}

pub(super) fn derive(s: &Scenario) -> DerivedConstants {
    match &s.kind {
        ScenarioKind::Partial(p) => partial_constants(p),
        ScenarioKind::MvOu(_) | ScenarioKind::PiecewiseK1(_) => DerivedConstants {
            lambda: lambda_with(s, QUADRATURE_PANELS),
            alpha_bar: None,
            ergodicity: None,
            propagation_of_chaos: None,
            k2_star: None,
            quadrature_panels: QUADRATURE_PANELS,
        },
    }
}

impl Scenario {
    /// `λ`, failing with `NotContractive` unless it is positive.
    pub fn require_contractive(&self) -> Result<()> {
        let c = self.derived_constants();
        match (c.lambda, c.k2_star, self.partial()) {
            (Some(l), _, _) if l > 0.0 => Ok(()),
            (Some(l), _, _) => Err(Error::NotContractive(format!("lambda = {l:.6} <= 0"))),
            (None, Some(k2s), Some(p)) if p.k2 <= k2s => Ok(()),
            (None, k2s, Some(p)) => Err(Error::NotContractive(format!(
                "K2 = {} exceeds admissible K2* = {}",
                p.k2,
                k2s.map_or("none".to_string(), |v| format!("{v:e}"))
            ))),
            _ => unreachable!("every scenario has lambda or partial constants"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x, 0.0, 2.0, 4);
        assert!((v - 0.0).abs() < 1e-14);
        assert!((simpson(|x| x * x, 0.0, 3.0, 2) - 9.0).abs() < 1e-13);
    }

    #[test]
    fn k1_zero_has_no_admissible_k2() {
        assert_eq!(admissible_k2(1.0, 0.0, 1.0), Err(Error::NoAdmissibleK2 { floor: K2_FLOOR }));
    }

    #[test]
    fn result_is_feasible_and_just_below_the_boundary() {
        let k = admissible_k2(1.0, 2.0, 1.0).unwrap();
        assert!(admissible(1.0, 2.0, 1.0, k));
        assert!(!admissible(1.0, 2.0, 1.0, k * (1.0 + 2e-6)));
    }
}
