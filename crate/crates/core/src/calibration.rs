//! Benchmarking sensitivity-parameter magnitudes against observed covariates
//! on the latent logistic scale.
//!
//! For a binary indicator with logistic index `m(X)` the implicit R² of a
//! latent outcome `Y` entering the index with coefficient `γ` is
//! `σ_Y²γ² / (var m + π²/3 + σ_Y²γ²)`. Setting this equal to the largest
//! single-covariate contribution `(ρ*)²` gives the calibrated `|γ*|`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Unit};
use crate::error::{Error, Result};
use crate::linalg::{mean_var, Design};
use crate::nuisance::{fit_logistic, LogisticConfig, LogisticModel, NuisanceSet};

/// Variance of the standard logistic distribution.
pub const LOGISTIC_VAR: f64 = PI * PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    /// Trial participation, fitted on all units.
    S,
    /// No intercurrent event among external controls.
    RInS0,
    /// No intercurrent event in the single-arm trial.
    RInS1,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::S, Indicator::RInS0, Indicator::RInS1];

    pub fn as_str(&self) -> &'static str {
        match self {
            Indicator::S => "s",
            Indicator::RInS0 => "r_in_s0",
            Indicator::RInS1 => "r_in_s1",
        }
    }

    fn sample<'a>(&self, ds: &'a Dataset) -> Vec<&'a Unit> {
        ds.units()
            .iter()
            .filter(|u| match self {
                Indicator::S => true,
                Indicator::RInS0 => !u.s,
                Indicator::RInS1 => u.s,
            })
            .collect()
    }

    fn label(&self, u: &Unit) -> bool {
        match self {
            Indicator::S => u.s,
            _ => u.r,
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(Indicator::S),
            "r_in_s0" | "r0" => Ok(Indicator::RInS0),
            "r_in_s1" | "r1" => Ok(Indicator::RInS1),
            _ => Err(Error::InvalidArgument(format!("unknown indicator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialRho2 {
    pub value: f64,
    /// Covariate has zero variance in the fitting sample.
    pub degenerate: bool,
}

fn lp_variance(model: &LogisticModel, design: &Design) -> f64 {
    if model.constant.is_some() {
        return 0.0;
    }
    let lp: Vec<f64> = design.rows().map(|r| model.linear_predictor(&r[1..])).collect();
    mean_var(&lp).1
}

/// Partial latent-scale variance explained by covariate `j` given the rest.
pub fn partial_rho2(ds: &Dataset, indicator: Indicator, j: usize, cfg: &LogisticConfig) -> Result<PartialRho2> {
    if j >= ds.p() {
        return Err(Error::InvalidArgument(format!("covariate index {j} out of range (p={})", ds.p())));
    }
    let units = indicator.sample(ds);
    let xj: Vec<f64> = units.iter().map(|u| u.x[j]).collect();
    if units.is_empty() || mean_var(&xj).1 == 0.0 {
        return Ok(PartialRho2 { value: 0.0, degenerate: true });
    }
    let labels: Vec<bool> = units.iter().map(|u| indicator.label(u)).collect();
    let full = Design::with_intercept(units.iter().map(|u| u.x.as_slice()));
    let reduced = full.without_column(j + 1);
    let v_full = lp_variance(&fit_logistic(&full, &labels, cfg)?, &full);
    let v_red = lp_variance(&fit_logistic(&reduced, &labels, cfg)?, &reduced);
    let value = ((v_full - v_red) / (v_full + LOGISTIC_VAR)).max(0.0);
    Ok(PartialRho2 { value, degenerate: false })
}

/// `(ρ*)² = max_j ρ²_j / (1 − max_j ρ²_j)`.
pub fn rho_star(per_covariate_rho2: &[f64]) -> Result<f64> {
    if per_covariate_rho2.is_empty() {
        return Err(Error::InvalidArgument("no partial variances supplied".into()));
    }
    if per_covariate_rho2.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("partial variances must lie in [0,1]".into()));
    }
    let m = per_covariate_rho2.iter().copied().fold(0.0, f64::max);
    if m >= 1.0 {
        return Err(Error::InvalidArgument("largest partial variance is 1".into()));
    }
    Ok(m / (1.0 - m))
}

/// `|γ*| = σ_Y⁻¹ √{(ρ*)²/(1−(ρ*)²) · (var m + π²/3)}`.
pub fn calibrate_gamma(rho_star_sq: f64, sigma_y_sq: f64, var_ms: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho_star_sq) {
        return Err(Error::InvalidArgument(format!("(rho*)^2 must lie in [0,1) (got {rho_star_sq})")));
    }
    if !(sigma_y_sq > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma_y^2 must be positive (got {sigma_y_sq})")));
    }
    if !(var_ms >= 0.0) {
        return Err(Error::InvalidArgument(format!("var m must be nonnegative (got {var_ms})")));
    }
    Ok((rho_star_sq / (1.0 - rho_star_sq) * (var_ms + LOGISTIC_VAR)).sqrt() / sigma_y_sq.sqrt())
}

/// Latent R² implied by `γ`; the inverse of [`calibrate_gamma`].
pub fn implied_rho2(gamma: f64, sigma_y_sq: f64, var_ms: f64) -> f64 {
    let a = sigma_y_sq * gamma * gamma;
    a / (var_ms + LOGISTIC_VAR + a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub indicator: Indicator,
    pub covariates: Vec<String>,
    pub per_covariate_rho2: Vec<f64>,
    /// Covariates skipped for having zero variance.
    pub degenerate: Vec<String>,
    pub rho_star_sq: f64,
    pub sigma_y_sq: f64,
    pub var_ms: f64,
    pub gamma_star_abs: f64,
}

/// Full calibration for one indicator using the fitted nuisances for
/// `σ_Y²` and `var{m(X)}`.
pub fn calibrate(ds: &Dataset, nu: &NuisanceSet, indicator: Indicator) -> Result<CalibrationReport> {
    let cfg = &nu.config.logistic;
    let mut rho = Vec::with_capacity(ds.p());
    let mut degenerate = Vec::new();
    for j in 0..ds.p() {
        let r = partial_rho2(ds, indicator, j, cfg)?;
        if r.degenerate {
            degenerate.push(ds.covariate_names()[j].clone());
        }
        rho.push(r.value);
    }
    let rho_star_sq = rho_star(&rho)?;

    // residual variance of the outcome law the indicator tilts
    let (s_out, model) = match indicator {
        Indicator::RInS1 => (true, &nu.outcome_1),
        _ => (false, &nu.outcome_0),
    };
    let resid: Vec<f64> = ds
        .stratify(s_out, Some(true))
        .iter()
        .map(|u| model.variance(&nu.om_features(&u.x)))
        .collect();
    if resid.is_empty() {
        return Err(Error::EmptyStratum(crate::error::Stratum { s: s_out, r: Some(true) }));
    }
    let sigma_y_sq = mean_var(&resid).0;

    let (lp_model, units) = match indicator {
        Indicator::S => (&nu.pi_s, indicator.sample(ds)),
        Indicator::RInS0 => (&nu.pi_r0, indicator.sample(ds)),
        Indicator::RInS1 => (&nu.pi_r1, indicator.sample(ds)),
    };
    let var_ms = if lp_model.constant.is_some() {
        0.0
    } else {
        let lp: Vec<f64> = units.iter().map(|u| lp_model.linear_predictor(&nu.ps_features(&u.x))).collect();
        mean_var(&lp).1
    };

    let gamma_star_abs = calibrate_gamma(rho_star_sq, sigma_y_sq, var_ms)?;
    Ok(CalibrationReport {
        indicator,
        covariates: ds.covariate_names().to_vec(),
        per_covariate_rho2: rho,
        degenerate,
        rho_star_sq,
        sigma_y_sq,
        var_ms,
        gamma_star_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_star_arithmetic() {
        assert_eq!(rho_star(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((rho_star(&[0.2, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!((rho_star(&[0.11]).unwrap() - 0.123596).abs() < 1e-6);
        assert!(rho_star(&[1.0]).is_err());
        assert!(rho_star(&[]).is_err());
    }

    #[test]
    fn calibrate_gamma_values() {
        assert_eq!(calibrate_gamma(0.0, 1.0, 0.3).unwrap(), 0.0);
        assert!((calibrate_gamma(0.5, 1.0, 0.0).unwrap() - 1.813799).abs() < 1e-6);
        assert!(calibrate_gamma(1.0, 1.0, 0.0).is_err());
        assert!(calibrate_gamma(0.2, 0.0, 0.0).is_err());
    }

    #[test]
    fn inversion() {
        let g = calibrate_gamma(0.3, 2.5, 0.7).unwrap();
        assert!((implied_rho2(g, 2.5, 0.7) - 0.3).abs() < 1e-12);
    }
}
