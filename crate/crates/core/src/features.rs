//! Covariate-to-feature maps used by the nuisance models.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;

/// Number of leading covariates that the nonlinear map transforms; any
/// further covariates pass through unchanged (the binary fifth covariate of
/// the simulation design).
pub const CONTINUOUS_COVARIATES: usize = 4;

/// `{x² + 2 sin(x) − 1.5} / √2`.
#[inline]
pub fn z_scalar(x: f64) -> f64 {
    (x * x + 2.0 * x.sin() - 1.5) / std::f64::consts::SQRT_2
}

/// Nonlinear covariate transform of the simulation design.
pub fn z_transform(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(j, &v)| if j < CONTINUOUS_COVARIATES { z_scalar(v) } else { v })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMap {
    /// Covariates enter linearly as given.
    #[default]
    Raw,
    /// Covariates pass through [`z_transform`] first.
    Z,
}

impl FeatureMap {
    pub fn apply(self, x: &[f64]) -> Vec<f64> {
        match self {
            FeatureMap::Raw => x.to_vec(),
            FeatureMap::Z => z_transform(x),
        }
    }
}

impl std::str::FromStr for FeatureMap {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "raw" | "x" => Ok(FeatureMap::Raw),
            "z" => Ok(FeatureMap::Z),
            other => Err(format!("unknown feature map `{other}` (expected raw|z)")),
        }
    }
}

/// Per-covariate z-scoring, estimated once and stored with the fitted models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.n() as f64;
        let p = ds.p();
        let mut mean = vec![0.0; p];
        for u in ds.units() {
            for (m, v) in mean.iter_mut().zip(&u.x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; p];
        for u in ds.units() {
            for ((s, v), m) in var.iter_mut().zip(&u.x).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        // constant columns are centred but not scaled
        let sd = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, sd }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }
}
