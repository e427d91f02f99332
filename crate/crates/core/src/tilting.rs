//! Exponentially tilted outcome moments and the augmentation kernels of the
//! tilting estimator.
//!
//! For an outcome law `Y | x ~ Σ_k π_k N(μ_k(x), σ_k²)` the normalising term
//! and tilted mean are available in closed form:
//!
//! ```text
//! c(x; γ) = E[e^{γY} | x]   = Σ_k π_k exp{μ_k γ + γ² σ_k² / 2}
//! b(x; γ) = E[Y e^{γY} | x] = Σ_k π_k (μ_k + γ σ_k²) exp{μ_k γ + γ² σ_k² / 2}
//! ```
//!
//! Both are evaluated in log space; `b` uses a signed log-sum-exp because
//! `μ_k + γσ_k²` can take either sign.

use serde::{Deserialize, Serialize};

use crate::data::Unit;
use crate::error::{Error, Result};
use crate::nuisance::{MixtureOutcomeModel, NuisanceAt, NuisanceSet};

/// Log-scale ceiling; anything larger is reported as overflow.
pub const OVERFLOW_LOG: f64 = 700.0;

/// Sensitivity parameters `(γ_S, γ_R0, γ_R1)`; all zero recovers the
/// exchangeability and ignorable-intercurrent-event assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GammaTriple {
    /// External-control outcome non-exchangeability.
    pub gamma_s: f64,
    /// Intercurrent-event tilt among external controls.
    pub gamma_r0: f64,
    /// Intercurrent-event tilt in the single-arm trial.
    pub gamma_r1: f64,
}

impl GammaTriple {
    pub const ZERO: GammaTriple = GammaTriple { gamma_s: 0.0, gamma_r0: 0.0, gamma_r1: 0.0 };

    pub fn new(gamma_s: f64, gamma_r0: f64, gamma_r1: f64) -> Self {
        Self { gamma_s, gamma_r0, gamma_r1 }
    }

    /// Same value for all three parameters.
    pub fn uniform(gamma: f64) -> Self {
        Self::new(gamma, gamma, gamma)
    }

    pub fn is_finite(&self) -> bool {
        self.gamma_s.is_finite() && self.gamma_r0.is_finite() && self.gamma_r1.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedMoments {
    pub c: f64,
    pub b: f64,
}

impl TiltedMoments {
    /// `b / c`, the mean of the tilted law.
    pub fn mean(&self) -> f64 {
        self.b / self.c
    }
}

/// Per-component `(log π_k + μ_k γ + γ²σ_k²/2, μ_k + γσ_k²)`, skipping
/// zero-weight components.
fn exponents(model: &MixtureOutcomeModel, features: &[f64], gamma: f64) -> Vec<(f64, f64)> {
    (0..model.k())
        .filter(|&k| model.weights[k] > 0.0)
        .map(|k| {
            let mu = model.component_mean(k, features);
            let s2 = model.sigmas[k] * model.sigmas[k];
            (model.weights[k].ln() + mu * gamma + 0.5 * gamma * gamma * s2, mu + gamma * s2)
        })
        .collect()
}

fn overflow(gamma: f64) -> Error {
    Error::TiltOverflow { gamma }
}

/// `log c(x; γ)`.
pub fn log_tilted_c(model: &MixtureOutcomeModel, features: &[f64], gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let terms = exponents(model, features, gamma);
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + terms.iter().map(|t| (t.0 - m).exp()).sum::<f64>().ln();
    if !lse.is_finite() || lse > OVERFLOW_LOG {
        return Err(overflow(gamma));
    }
    Ok(lse)
}

pub fn tilted_c(model: &MixtureOutcomeModel, features: &[f64], gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(1.0);
    }
    log_tilted_c(model, features, gamma).map(f64::exp)
}

pub fn tilted_b(model: &MixtureOutcomeModel, features: &[f64], gamma: f64) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(model.mean(features));
    }
    let terms = exponents(model, features, gamma);
    // log|term| = e_k + log|m_k|; zero multipliers contribute nothing
    let logs: Vec<(f64, f64)> = terms
        .iter()
        .filter(|(_, mk)| *mk != 0.0)
        .map(|(ek, mk)| (ek + mk.abs().ln(), mk.signum()))
        .collect();
    if logs.is_empty() {
        return Ok(0.0);
    }
    let m = logs.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|(l, s)| s * (l - m).exp()).sum();
    if sum == 0.0 {
        return Ok(0.0);
    }
    let log_abs = m + sum.abs().ln();
    if !log_abs.is_finite() || log_abs > OVERFLOW_LOG {
        return Err(overflow(gamma));
    }
    Ok(sum.signum() * log_abs.exp())
}

pub fn tilted_moments(model: &MixtureOutcomeModel, features: &[f64], gamma: f64) -> Result<TiltedMoments> {
    Ok(TiltedMoments { c: tilted_c(model, features, gamma)?, b: tilted_b(model, features, gamma)? })
}

/// `b(x; γ) / c(x; γ)` computed as a softmax-weighted average, which stays
/// finite even where `b` and `c` individually overflow.
pub fn tilted_mean(model: &MixtureOutcomeModel, features: &[f64], gamma: f64) -> f64 {
    if gamma == 0.0 {
        return model.mean(features);
    }
    let terms = exponents(model, features, gamma);
    let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = terms.iter().fold((0.0, 0.0), |(n, d), (e, mk)| {
        let w = (e - m).exp();
        (n + w * mk, d + w)
    });
    num / den
}

/// Tilted quantities of the external-control outcome law at one `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlTilt {
    pub pi_r0: f64,
    /// Moments at `γ_S`.
    pub at_s: TiltedMoments,
    /// Moments at `γ_R0`.
    pub at_r0: TiltedMoments,
    /// Moments at `γ_S + γ_R0`.
    pub at_sum: TiltedMoments,
    pub d: f64,
    pub e: f64,
}

impl ControlTilt {
    pub fn new(outcome_0: &MixtureOutcomeModel, features: &[f64], pi_r0: f64, gamma_r0: f64, gamma_s: f64) -> Result<Self> {
        let at_s = tilted_moments(outcome_0, features, gamma_s)?;
        let at_r0 = tilted_moments(outcome_0, features, gamma_r0)?;
        let at_sum = tilted_moments(outcome_0, features, gamma_s + gamma_r0)?;
        let d = pi_r0 * at_s.b * at_r0.c + (1.0 - pi_r0) * at_sum.b;
        let e = pi_r0 * at_s.c * at_r0.c + (1.0 - pi_r0) * at_sum.c;
        if !d.is_finite() || !e.is_finite() {
            return Err(overflow(gamma_s + gamma_r0));
        }
        Ok(Self { pi_r0, at_s, at_r0, at_sum, d, e })
    }

    /// `d / e`, the trial-population mean of `Y(0)` at `x`.
    pub fn mean(&self) -> f64 {
        self.d / self.e
    }
}

/// `(d, e)` at `x` under the fitted external-control outcome model.
pub fn composite_de(nu: &NuisanceSet, x: &[f64], gamma_r0: f64, gamma_s: f64) -> Result<(f64, f64)> {
    let at = nu.at(x);
    let t = ControlTilt::new(&nu.outcome_0, &at.om, at.pi_r0, gamma_r0, gamma_s)?;
    Ok((t.d, t.e))
}

fn tilt_exp(gamma: f64, y: f64) -> Result<f64> {
    let a = gamma * y;
    if a > OVERFLOW_LOG {
        return Err(overflow(gamma));
    }
    Ok(a.exp())
}

/// `g(V; γ_R1)` from its pieces: `e^{γy}/c · (y − b/c)`.
pub fn g_kernel(y: f64, moments: TiltedMoments, gamma_r1: f64) -> Result<f64> {
    if gamma_r1 == 0.0 {
        return Ok(y - moments.b);
    }
    let log_c = moments.c.ln();
    let a = gamma_r1 * y - log_c;
    if a > OVERFLOW_LOG {
        return Err(overflow(gamma_r1));
    }
    Ok(a.exp() * (y - moments.mean()))
}

/// SAT augmentation term; only defined for units with `s = 1, r = 1`.
pub fn aug_g(nu: &NuisanceSet, unit: &Unit, gamma_r1: f64) -> Result<f64> {
    if !unit.s || !unit.r {
        return Err(Error::Contract("g is only evaluated for S=1, R=1 units".into()));
    }
    let y = unit.y.ok_or_else(|| Error::Contract("g needs an observed outcome".into()))?;
    let om = nu.om_features(&unit.x);
    let moments = tilted_moments(&nu.outcome_1, &om, gamma_r1)?;
    g_kernel(y, moments, gamma_r1)
}

/// `h(V; γ_R0, γ_S)` from precomputed control tilts.
///
/// With `m₁ = b(γ_S)c(γ_R0) − b(γ_S+γ_R0)` and `m₂ = c(γ_S)c(γ_R0) − c(γ_S+γ_R0)`,
///
/// ```text
/// h = (R − π_R0)(m₁/e − d·m₂/e²) + R(m₃/e − d·m₄/e²)
/// m₃ = b(γ_S)e^{γ_R0 y} + c(γ_R0){y e^{γ_S y} − b(γ_S)} + q_R0 y e^{(γ_S+γ_R0)y}
/// m₄ = c(γ_S)e^{γ_R0 y} + c(γ_R0){e^{γ_S y} − c(γ_S)} + q_R0 e^{(γ_S+γ_R0)y}
/// ```
///
/// Units with `r = 0` only need the `x`-level terms.
pub fn h_kernel(t: &ControlTilt, r: bool, y: Option<f64>, gamma_r0: f64, gamma_s: f64) -> Result<f64> {
    let m1 = t.at_s.b * t.at_r0.c - t.at_sum.b;
    let m2 = t.at_s.c * t.at_r0.c - t.at_sum.c;
    let (d, e) = (t.d, t.e);
    let resid = r as u8 as f64 - t.pi_r0;
    let mut h = resid * (m1 / e - d * m2 / (e * e));
    if r {
        let y = y.ok_or_else(|| Error::Contract("h needs an observed outcome when r=1".into()))?;
        let q_r0 = (1.0 - t.pi_r0) / t.pi_r0;
        let e_r0 = tilt_exp(gamma_r0, y)?;
        let e_s = tilt_exp(gamma_s, y)?;
        let e_sum = tilt_exp(gamma_s + gamma_r0, y)?;
        let m3 = t.at_s.b * e_r0 + t.at_r0.c * (y * e_s - t.at_s.b) + q_r0 * y * e_sum;
        let m4 = t.at_s.c * e_r0 + t.at_r0.c * (e_s - t.at_s.c) + q_r0 * e_sum;
        h += m3 / e - d * m4 / (e * e);
    }
    Ok(h)
}

/// External-control augmentation term; only defined for units with `s = 0`.
pub fn aug_h(nu: &NuisanceSet, unit: &Unit, gamma_r0: f64, gamma_s: f64) -> Result<f64> {
    if unit.s {
        return Err(Error::Contract("h is only evaluated for S=0 units".into()));
    }
    let at: NuisanceAt = nu.at(&unit.x);
    let t = ControlTilt::new(&nu.outcome_0, &at.om, at.pi_r0, gamma_r0, gamma_s)?;
    h_kernel(&t, unit.r, unit.y, gamma_r0, gamma_s)
}
