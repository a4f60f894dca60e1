use std::collections::BTreeMap;
use std::f64::consts::TAU as TWO_PI;

use serde::{Deserialize, Serialize};

use super::{MeasureView, Scenario, ScenarioKind, EXP2_LIMIT};
use crate::error::{Error, Result};

/// Names and one-line descriptions of the built-in scenarios.
pub const BUILTIN_SCENARIOS: [(&str, &str); 4] = [
    ("mv_ou_periodic", "mean-field Ornstein-Uhlenbeck with periodic forcing (closed-form periodic mean)"),
    ("piecewise_k1", "one-dimensional example with piecewise-linear K1(t) and mu(|.|)-dependent coefficients"),
    ("double_well_partial", "double-well potential with periodic alpha_t, tanh interaction, split noise"),
    ("truncated_ou", "truncated quadratic potential U(x) = x^2 g_n(x)^2 + a^2 - 2 a x g_n(x), split noise"),
];

/// Scenario parameter value as it appears in a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl ParamValue {
    fn as_num(&self, key: &str) -> Result<f64> {
        match self {
            ParamValue::Num(v) => Ok(*v),
            ParamValue::Text(_) => Err(Error::InvalidParameter(format!("`{key}` must be a number"))),
        }
    }

    fn as_text(&self, key: &str) -> Result<&str> {
        match self {
            ParamValue::Text(s) => Ok(s),
            ParamValue::Num(_) => Err(Error::InvalidParameter(format!("`{key}` must be a string"))),
        }
    }
}

fn as_dim(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidParameter(format!("dim must be a positive integer, got {v}")))
    }
}

/// `b_t(x, μ) = −a x + b μ(id) + A sin(2πt/τ)`, `σ_t = σ₀ I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvOuParams {
    pub a: f64,
    pub b: f64,
    pub amplitude: f64,
    pub sigma0: f64,
    pub tau: f64,
    pub dim: usize,
}

impl Default for MvOuParams {
    fn default() -> Self {
        Self { a: 1.0, b: 0.25, amplitude: 1.0, sigma0: 0.2, tau: 1.0, dim: 1 }
    }
}

impl MvOuParams {
    pub fn omega(&self) -> f64 {
        TWO_PI / self.tau
    }

    pub fn forcing(&self, t: f64) -> f64 {
        self.amplitude * (self.omega() * t).sin()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiecewiseVariant {
    /// Cubic term active on the first three quarters of the period.
    AsWritten,
    /// Cubic term active only where `K₁(t) ≤ 0`.
    Clamped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseK1Params {
    /// Constant value of `K₂(t)`.
    pub kappa: f64,
    pub variant: PiecewiseVariant,
    pub tau: f64,
}

impl Default for PiecewiseK1Params {
    fn default() -> Self {
        Self { kappa: 0.1, variant: PiecewiseVariant::Clamped, tau: 1.0 }
    }
}

impl PiecewiseK1Params {
    fn unit_phase(&self, t: f64) -> f64 {
        (t / self.tau).rem_euclid(1.0)
    }

    pub fn k1(&self, t: f64) -> f64 {
        let s = self.unit_phase(t);
        if s <= 0.5 {
            -2.0 * s
        } else if s <= 0.75 {
            6.0 * s - 4.0
        } else {
            -2.0 * (s - 1.0)
        }
    }

    pub fn cubic_active(&self, t: f64) -> bool {
        let s = self.unit_phase(t);
        match self.variant {
            PiecewiseVariant::AsWritten => s < 0.75,
            PiecewiseVariant::Clamped => s < 0.75 && self.k1(t) <= 0.0,
        }
    }
}

/// Confining part `b̂_t(x) = −α_t ∇U(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Potential {
    /// `U(x) = |x|⁴/4 − |x|²/2`
    DoubleWell,
    /// Componentwise `U(x) = x² g_n(x)² + a² − 2 a x g_n(x)`.
    Truncated { n: f64, a: f64 },
    /// `U ≡ 0`
    Flat,
}

impl Potential {
    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Potential::DoubleWell => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = (r2 - 1.0) * xi;
                }
            }
            Potential::Truncated { n, a } => {
                for (o, &xi) in out.iter_mut().zip(x) {
                    *o = if xi < -n {
                        2.0 * n * n * xi + 2.0 * a * n
                    } else if xi < n {
                        4.0 * xi * xi * xi - 4.0 * a * xi
                    } else {
                        2.0 * n * n * xi - 2.0 * a * n
                    };
                }
            }
            Potential::Flat => out.fill(0.0),
        }
    }
}

/// Interaction kernel `b̃_t(x, y) = K₂ α_t k(y − x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// Componentwise `tanh`: bounded and 1-Lipschitz in each argument.
    Tanh,
    /// `k(z) = z`; its convolution only needs the mean.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SigmaHat {
    /// `σ̂ = s I`
    Constant { scale: f64 },
    /// `σ̂_t(x) = 0.1 √(K₃ α_t) diag(sin x_i)`
    StateDependent,
}

/// `α_t = base (1 + amplitude sin(2πt/τ))`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaProfile {
    pub base: f64,
    pub amplitude: f64,
}

impl AlphaProfile {
    pub fn at(&self, t: f64, tau: f64) -> f64 {
        self.base * (1.0 + self.amplitude * (TWO_PI * t / tau).sin())
    }
}

/// Split-noise scenario `dX = (b̂ + b̃ * μ) dt + √α dB + σ̂ dW` with its
/// dissipativity constants `K₀, K₁, K₃, ℓ₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialParams {
    pub potential: Potential,
    pub interaction: Interaction,
    pub k2: f64,
    pub alpha: AlphaProfile,
    pub sigma_hat: SigmaHat,
    pub dim: usize,
    pub tau: f64,
    pub k0: f64,
    pub k1: f64,
    pub k3: f64,
    pub l0: f64,
}

impl PartialParams {
    /// Double well with `K₁ = 1/32`, `ℓ₀ = 2√(1+K₁)`, `K₀ = 1`: for
    /// `r = |x − y|`, `⟨x−y, ∇U(x)−∇U(y)⟩ ≥ r⁴/4 − r²`, so the drift is
    /// `α K₀`-expansive at worst and `α K₁`-contractive beyond `ℓ₀`.
    pub fn double_well_default() -> Self {
        let k1 = 1.0 / 32.0;
        Self {
            potential: Potential::DoubleWell,
            interaction: Interaction::Tanh,
            k2: 0.1,
            alpha: AlphaProfile { base: 1.0, amplitude: 0.5 },
            sigma_hat: SigmaHat::Constant { scale: 0.1 },
            dim: 1,
            tau: 1.0,
            k0: 1.0,
            k1,
            k3: 0.0,
            l0: 2.0 * (1.0 + k1).sqrt(),
        }
    }

    /// Truncated potential with `α ≡ 1`-scale profile; `K₀ = 4a` bounds
    /// `−U''` inside `[−n, n]` and `ℓ₀ = √(4a + K₁)` gives `K₁ = 1` there.
    pub fn truncated_default() -> Self {
        let (n, a, k1) = (2.0, 1.0, 1.0);
        Self {
            potential: Potential::Truncated { n, a },
            interaction: Interaction::Tanh,
            k2: 0.1,
            alpha: AlphaProfile { base: 1.0, amplitude: 0.5 },
            sigma_hat: SigmaHat::Constant { scale: 0.0 },
            dim: 1,
            tau: 1.0,
            k0: 4.0 * a,
            k1,
            k3: 0.0,
            l0: (4.0 * a + k1).sqrt(),
        }
    }

    pub fn b_hat_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let alpha = self.alpha.at(t, self.tau);
        self.potential.gradient_into(x, out);
        out.iter_mut().for_each(|o| *o *= -alpha);
    }

    pub fn b_tilde_into(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        let scale = self.k2 * self.alpha.at(t, self.tau);
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = scale * self.kernel(yi - xi);
        }
    }

    #[inline]
    fn kernel(&self, z: f64) -> f64 {
        match self.interaction {
            Interaction::Tanh => z.tanh(),
            Interaction::Linear => z,
        }
    }

    /// Adds `(b̃_t * μ)(x)` to `out`.
    pub(super) fn add_convolution(
        &self,
        t: f64,
        x: &[f64],
        mu: &MeasureView<'_>,
        out: &mut [f64],
    ) -> Result<()> {
        let scale = self.k2 * self.alpha.at(t, self.tau);
        match (mu.samples, self.interaction) {
            (Some(samples), _) => {
                let d = self.dim;
                let n = samples.len() / d;
                let inv = 1.0 / n as f64;
                let cache = mu.exp2.filter(|_| self.interaction == Interaction::Tanh);
                for c in 0..d {
                    let xc = x[c];
                    let mut acc = 0.0;
                    match cache {
                        Some(e2) if xc.abs() <= EXP2_LIMIT => {
                            let f = (-2.0 * xc).exp();
                            for j in 0..n {
                                let u = e2[j * d + c] * f;
                                acc += (u - 1.0) / (u + 1.0);
                            }
                        }
                        _ => {
                            for j in 0..n {
                                acc += self.kernel(samples[j * d + c] - xc);
                            }
                        }
                    }
                    out[c] += scale * acc * inv;
                }
            }
            (None, Interaction::Linear) => {
                for ((o, xi), mi) in out.iter_mut().zip(x).zip(&mu.stats.mean) {
                    *o += scale * (mi - xi);
                }
            }
            (None, Interaction::Tanh) => return Err(Error::MissingStats),
        }
        Ok(())
    }

    /// Row-major `σ̂_t(x)`.
    pub fn sigma_hat_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.fill(0.0);
        match self.sigma_hat {
            SigmaHat::Constant { scale } => {
                for i in 0..d {
                    out[i * d + i] = scale;
                }
            }
            SigmaHat::StateDependent => {
                let s = 0.1 * (self.k3 * self.alpha.at(t, self.tau)).sqrt();
                for i in 0..d {
                    out[i * d + i] = s * x[i].sin();
                }
            }
        }
    }

    pub fn sigma_hat_is_zero(&self) -> bool {
        match self.sigma_hat {
            SigmaHat::Constant { scale } => scale == 0.0,
            SigmaHat::StateDependent => self.k3 == 0.0,
        }
    }

    pub fn sigma_hat_is_constant(&self) -> bool {
        matches!(self.sigma_hat, SigmaHat::Constant { .. })
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || self.dim == 0 {
            return Err(Error::InvalidParameter("tau must be positive and dim at least 1".into()));
        }
        if !(self.alpha.base > 0.0) || self.alpha.amplitude.abs() > 1.0 {
            return Err(Error::InvalidParameter(
                "alpha_t must be non-negative with positive period average (alpha_base > 0, |alpha_amp| <= 1)".into(),
            ));
        }
        if self.k2 < 0.0 || self.k0 < 0.0 || self.l0 < 0.0 || self.k3 < 0.0 {
            return Err(Error::InvalidParameter("K0, K2, K3 and l0 must be non-negative".into()));
        }
        if let Potential::Truncated { n, a } = self.potential {
            if !(n >= 1.0) || !(a > 0.0) {
                return Err(Error::InvalidParameter("truncated_ou needs n >= 1 and a > 0".into()));
            }
        }
        Ok(())
    }
}

fn take_num(overrides: &mut BTreeMap<String, ParamValue>, key: &str, default: f64) -> Result<f64> {
    overrides.remove(key).map_or(Ok(default), |v| v.as_num(key))
}

fn take_text(overrides: &mut BTreeMap<String, ParamValue>, key: &str, default: &str) -> Result<String> {
    overrides
        .remove(key)
        .map_or(Ok(default.to_string()), |v| v.as_text(key).map(str::to_string))
}

fn partial_from(
    mut base: PartialParams,
    overrides: &mut BTreeMap<String, ParamValue>,
    truncated: bool,
) -> Result<PartialParams> {
    if truncated {
        let (n0, a0) = match base.potential {
            Potential::Truncated { n, a } => (n, a),
            _ => unreachable!(),
        };
        let n = take_num(overrides, "n", n0)?;
        let a = take_num(overrides, "a", a0)?;
        base.potential = Potential::Truncated { n, a };
        base.k0 = 4.0 * a;
    }
    base.k2 = take_num(overrides, "k2", base.k2)?;
    base.alpha.base = take_num(overrides, "alpha_base", base.alpha.base)?;
    base.alpha.amplitude = take_num(overrides, "alpha_amp", base.alpha.amplitude)?;
    base.tau = take_num(overrides, "tau", base.tau)?;
    base.dim = as_dim(take_num(overrides, "dim", base.dim as f64)?)?;
    base.k3 = take_num(overrides, "k3", base.k3)?;
    let k1 = take_num(overrides, "k1", base.k1)?;
    base.k1 = k1;
    base.l0 = if truncated {
        let a = match base.potential {
            Potential::Truncated { a, .. } => a,
            _ => unreachable!(),
        };
        (4.0 * a + k1).sqrt()
    } else {
        2.0 * (1.0 + k1).sqrt()
    };
    base.interaction = match take_text(overrides, "kernel", "tanh")?.as_str() {
        "tanh" => Interaction::Tanh,
        "linear" => Interaction::Linear,
        other => return Err(Error::InvalidParameter(format!("unknown kernel `{other}`"))),
    };
    let default_scale = match base.sigma_hat {
        SigmaHat::Constant { scale } => scale,
        SigmaHat::StateDependent => 0.0,
    };
    let scale = take_num(overrides, "sigma_hat", default_scale)?;
    base.sigma_hat = match take_text(overrides, "sigma_hat_kind", "constant")?.as_str() {
        "constant" => SigmaHat::Constant { scale },
        "state_dependent" => {
            // ½‖σ̂(x) − σ̂(y)‖² ≤ 0.005 K₃ α |x − y|² moves into the dissipativity budget
            base.k0 += 0.005 * base.k3;
            base.k1 -= 0.005 * base.k3;
            SigmaHat::StateDependent
        }
        other => return Err(Error::InvalidParameter(format!("unknown sigma_hat_kind `{other}`"))),
    };
    Ok(base)
}

impl Scenario {
    /// Built-in scenario by name with parameter overrides; unknown names or
    /// keys are errors.
    pub fn builtin(name: &str, overrides: &BTreeMap<String, ParamValue>) -> Result<Scenario> {
        let mut rest = overrides.clone();
        let kind = match name {
            "mv_ou_periodic" => {
                let d = MvOuParams::default();
                let p = MvOuParams {
                    a: take_num(&mut rest, "a", d.a)?,
                    b: take_num(&mut rest, "b", d.b)?,
                    amplitude: take_num(&mut rest, "amplitude", d.amplitude)?,
                    sigma0: take_num(&mut rest, "sigma0", d.sigma0)?,
                    tau: take_num(&mut rest, "tau", d.tau)?,
                    dim: as_dim(take_num(&mut rest, "dim", d.dim as f64)?)?,
                };
                if !(p.tau > 0.0) {
                    return Err(Error::InvalidParameter("tau must be positive".into()));
                }
                ScenarioKind::MvOu(p)
            }
            "piecewise_k1" => {
                let d = PiecewiseK1Params::default();
                let variant = match take_text(&mut rest, "variant", "clamped")?.as_str() {
                    "clamped" => PiecewiseVariant::Clamped,
                    "as_written" => PiecewiseVariant::AsWritten,
                    other => {
                        return Err(Error::InvalidParameter(format!("unknown variant `{other}`")))
                    }
                };
                let p = PiecewiseK1Params {
                    kappa: take_num(&mut rest, "kappa", d.kappa)?,
                    variant,
                    tau: take_num(&mut rest, "tau", d.tau)?,
                };
                if !(p.tau > 0.0) || p.kappa < 0.0 {
                    return Err(Error::InvalidParameter("tau must be positive, kappa non-negative".into()));
                }
                ScenarioKind::PiecewiseK1(p)
            }
            "double_well_partial" => {
                let p = partial_from(PartialParams::double_well_default(), &mut rest, false)?;
                p.validate()?;
                ScenarioKind::Partial(p)
            }
            "truncated_ou" => {
                let p = partial_from(PartialParams::truncated_default(), &mut rest, true)?;
                p.validate()?;
                ScenarioKind::Partial(p)
            }
            other => return Err(Error::InvalidParameter(format!("unknown scenario `{other}`"))),
        };
        if let Some(key) = rest.keys().next() {
            return Err(Error::InvalidParameter(format!(
                "unknown parameter `{key}` for scenario `{name}`"
            )));
        }
        Ok(Scenario { name: name.to_string(), kind })
    }

    pub fn builtin_default(name: &str) -> Result<Scenario> {
        Self::builtin(name, &BTreeMap::new())
    }

    /// Split-noise scenario assembled directly from its parameters.
    pub fn partial_custom(params: PartialParams) -> Result<Scenario> {
        params.validate()?;
        Ok(Scenario { name: "custom_partial".into(), kind: ScenarioKind::Partial(params) })
    }

    pub fn mv_ou_custom(params: MvOuParams) -> Result<Scenario> {
        if !(params.tau > 0.0) || params.dim == 0 {
            return Err(Error::InvalidParameter("tau must be positive and dim at least 1".into()));
        }
        Ok(Scenario { name: "mv_ou_periodic".into(), kind: ScenarioKind::MvOu(params) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_names_and_keys_are_rejected() {
        assert!(Scenario::builtin_default("nope").is_err());
        let mut o = BTreeMap::new();
        o.insert("foo".to_string(), ParamValue::Num(1.0));
        let err = Scenario::builtin("mv_ou_periodic", &o).unwrap_err();
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn all_builtins_construct() {
        for (name, _) in BUILTIN_SCENARIOS {
            let s = Scenario::builtin_default(name).unwrap();
            assert_eq!(s.name, name);
            assert!(s.tau() > 0.0);
        }
    }

    #[test]
    fn alpha_must_stay_non_negative() {
        let mut o = BTreeMap::new();
        o.insert("alpha_amp".to_string(), ParamValue::Num(1.5));
        assert!(Scenario::builtin("double_well_partial", &o).is_err());
    }

    #[test]
    fn alpha_profile_quarter_period() {
        let a = AlphaProfile { base: 1.0, amplitude: 0.5 };
        assert!((a.at(0.25, 1.0).sqrt() - 1.5f64.sqrt()).abs() < 1e-15);
    }
}
