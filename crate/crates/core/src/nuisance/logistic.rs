//! Ridge-stabilised logistic regression fitted by IRLS (Newton–Raphson).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd, Design};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iter: usize,
    /// Sup-norm tolerance on the penalised score.
    pub tol: f64,
    /// L2 penalty on slopes; the intercept is never penalised.
    pub ridge: f64,
    pub clip: (f64, f64),
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8, ridge: 1e-6, clip: (0.01, 0.99) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// Labels are perfectly separated by the linear predictor.
    Separation,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// Intercept followed by one slope per feature.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub clip: (f64, f64),
    #[serde(default)]
    pub warning: Option<FitWarning>,
    /// Set when every fitting label was identical; prediction is then this
    /// constant and ignores covariates and clipping.
    #[serde(default)]
    pub constant: Option<f64>,
}

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// log(1 + e^η) without overflow.
#[inline]
fn log1pexp(eta: f64) -> f64 {
    if eta > 35.0 {
        eta
    } else if eta < -35.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn from_coefficients(coefficients: Vec<f64>, clip: (f64, f64)) -> Self {
        Self { coefficients, converged: true, n_iter: 0, clip, warning: None, constant: None }
    }

    /// Model that predicts `p` everywhere.
    pub fn constant(p: f64, n_features: usize) -> Self {
        Self {
            coefficients: vec![0.0; n_features + 1],
            converged: true,
            n_iter: 0,
            clip: (p, p),
            warning: None,
            constant: Some(p),
        }
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// `βᵀ[1, x]`.
    pub fn linear_predictor(&self, features: &[f64]) -> f64 {
        debug_assert_eq!(features.len() + 1, self.coefficients.len());
        if let Some(p) = self.constant {
            return logit(p);
        }
        self.coefficients[0] + dot(&self.coefficients[1..], features)
    }

    /// Clipped probability `logit⁻¹(βᵀ[1, x])`.
    pub fn predict(&self, features: &[f64]) -> f64 {
        if let Some(p) = self.constant {
            return p;
        }
        let (lo, hi) = self.clip;
        expit(self.linear_predictor(features)).clamp(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddsKind {
    /// `π / (1 − π)`.
    Participation,
    /// `(1 − π) / π`.
    Response,
}

/// Density-ratio transform of a fitted propensity.
pub fn density_ratio_q(m: &LogisticModel, features: &[f64], kind: OddsKind) -> f64 {
    odds(m.predict(features), kind)
}

#[inline]
pub fn odds(pi: f64, kind: OddsKind) -> f64 {
    match kind {
        OddsKind::Participation => pi / (1.0 - pi),
        OddsKind::Response => (1.0 - pi) / pi,
    }
}

/// Penalised log-likelihood `Σ[yη − log(1+e^η)] − (ridge/2)‖slopes‖²`.
pub fn penalized_loglik(design: &Design, labels: &[bool], beta: &[f64], ridge: f64) -> f64 {
    let ll: f64 = design
        .rows()
        .zip(labels)
        .map(|(row, &y)| {
            let eta = dot(row, beta);
            if y { eta - log1pexp(eta) } else { -log1pexp(eta) }
        })
        .sum();
    ll - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Gradient of [`penalized_loglik`].
pub fn penalized_score(design: &Design, labels: &[bool], beta: &[f64], ridge: f64) -> Vec<f64> {
    let k = design.ncols();
    let mut g = vec![0.0; k];
    for (row, &y) in design.rows().zip(labels) {
        let resid = y as u8 as f64 - expit(dot(row, beta));
        for (gj, xj) in g.iter_mut().zip(row) {
            *gj += resid * xj;
        }
    }
    for j in 1..k {
        g[j] -= ridge * beta[j];
    }
    g
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

const DIVERGENCE_NORM: f64 = 1e4;

/// Fit `P(label = 1 | x) = logit⁻¹(βᵀ[1, x])` by penalised IRLS.
///
/// Perfect separation does not produce an error: the returned model carries
/// `converged = false` with [`FitWarning::Separation`] and the last
/// ridge-stabilised iterate.
pub fn fit_logistic(design: &Design, labels: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let n = design.nrows();
    let k = design.ncols();
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!("{} labels for {} rows", labels.len(), n)));
    }
    if n < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "logistic fit needs at least {} rows for {} features, got {n}",
            k + 1,
            k - 1
        )));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::Contract("logistic fit requires both label values".into()));
    }
    let (lo, hi) = cfg.clip;
    if !(0.0 < lo && lo <= hi && hi < 1.0) {
        return Err(Error::InvalidArgument(format!("clip bounds ({lo}, {hi}) must satisfy 0 < lo <= hi < 1")));
    }

    let mut beta = vec![0.0; k];
    beta[0] = logit(n_pos as f64 / n as f64);
    let mut ll = penalized_loglik(design, labels, &beta, cfg.ridge);
    let mut converged = false;
    let mut diverged = false;
    let mut iter = 0;

    while iter < cfg.max_iter {
        let score = penalized_score(design, labels, &beta, cfg.ridge);
        if sup_norm(&score) <= cfg.tol {
            converged = true;
            break;
        }
        iter += 1;

        let mut h = DMatrix::<f64>::zeros(k, k);
        for row in design.rows() {
            let p = expit(dot(row, &beta));
            let w = (p * (1.0 - p)).max(1e-300);
            for a in 0..k {
                let wa = w * row[a];
                for b in 0..=a {
                    h[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
            if a > 0 {
                h[(a, a)] += cfg.ridge;
            }
        }
        let Some(step) = solve_spd(h, DVector::from_vec(score)) else {
            break;
        };

        // Newton step with halving; the penalised objective is concave so a
        // short enough step always ascends.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let ll_c = penalized_loglik(design, labels, &cand, cfg.ridge);
            if ll_c >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = ll_c;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        if sup_norm(&beta) > DIVERGENCE_NORM {
            diverged = true;
            break;
        }
    }
    if !converged && !diverged {
        converged = sup_norm(&penalized_score(design, labels, &beta, cfg.ridge)) <= cfg.tol;
    }

    let separated = diverged
        || design.rows().zip(labels).all(|(row, &y)| {
            let eta = dot(row, &beta);
            if y { eta > 0.0 } else { eta < 0.0 }
        });

    let warning = if separated {
        converged = false;
        Some(FitWarning::Separation)
    } else if !converged {
        Some(FitWarning::MaxIterations)
    } else {
        None
    };

    Ok(LogisticModel { coefficients: beta, converged, n_iter: iter, clip: cfg.clip, warning, constant: None })
}
