//! Point estimators of the treatment-policy ATE among trial participants,
//! stratified nonparametric bootstrap and sensitivity grids.
//!
//! Every estimator has the form `τ̂ = (1/N_R) Σ_i T_i` for a per-unit term
//! `T_i`; contributions are stored as `φ_i = (N/N_R)(T_i − s_i τ̂)`, which
//! average to zero at `τ̂`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, Unit};
use crate::error::{Error, Result};
use crate::nuisance::{fit_nuisances, NuisanceConfig, NuisanceSet};
use crate::rng::{derive_seed, stream};
use crate::tilting::{g_kernel, h_kernel, tilted_moments, ControlTilt, GammaTriple};

/// Maximum draws per bootstrap replicate before giving up.
pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Doubly robust estimator under exchangeability and ignorable events.
    Primary,
    Tilting,
    /// Jump-to-reference for SAT units with intercurrent events.
    J2r,
    /// Propensity weighting only.
    Ps,
    /// Outcome regression only.
    Om,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Primary, Method::Tilting, Method::J2r, Method::Ps, Method::Om];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Primary => "primary",
            Method::Tilting => "tilting",
            Method::J2r => "j2r",
            Method::Ps => "ps",
            Method::Om => "om",
        }
    }

    /// Whether the method reads any sensitivity parameter.
    pub fn uses_gammas(&self) -> bool {
        matches!(self, Method::Tilting | Method::J2r)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// Method plus the sensitivity parameters it is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub method: Method,
    pub gammas: GammaTriple,
}

impl SensitivitySpec {
    /// Parameters a method does not read are reset to zero.
    pub fn new(method: Method, gammas: GammaTriple) -> Self {
        let gammas = match method {
            Method::Tilting => gammas,
            Method::J2r => GammaTriple { gamma_r1: 0.0, ..gammas },
            _ => GammaTriple::ZERO,
        };
        Self { method, gammas }
    }

    pub fn primary() -> Self {
        Self::new(Method::Primary, GammaTriple::ZERO)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub method: Method,
    pub gammas: GammaTriple,
    pub tau_hat: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub alpha: Option<f64>,
    pub n_r: usize,
    pub n_e: usize,
    /// Bootstrap replicates used for `se`.
    pub b: Option<usize>,
    pub seed: Option<u64>,
    pub contributions: Vec<f64>,
}

/// Flat output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub method: Method,
    pub gamma_s: f64,
    pub gamma_r0: f64,
    pub gamma_r1: f64,
    pub tau_hat: f64,
    pub se: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n_r: usize,
    pub n_e: usize,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub seed: Option<u64>,
}

impl Estimate {
    /// Mean of the stored contributions.
    pub fn residual(&self) -> f64 {
        self.contributions.iter().sum::<f64>() / self.contributions.len() as f64
    }

    pub fn row(&self) -> EstimateRow {
        EstimateRow {
            method: self.method,
            gamma_s: self.gammas.gamma_s,
            gamma_r0: self.gammas.gamma_r0,
            gamma_r1: self.gammas.gamma_r1,
            tau_hat: self.tau_hat,
            se: self.se,
            ci_lo: self.ci.map(|c| c.0),
            ci_hi: self.ci.map(|c| c.1),
            n_r: self.n_r,
            n_e: self.n_e,
            b: self.b,
            seed: self.seed,
        }
    }

    fn with_bootstrap(mut self, se: f64, alpha: f64, b: usize, seed: u64) -> Self {
        let z = normal_quantile(1.0 - alpha / 2.0);
        self.se = Some(se);
        self.ci = Some((self.tau_hat - z * se, self.tau_hat + z * se));
        self.alpha = Some(alpha);
        self.b = Some(b);
        self.seed = Some(seed);
        self
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Write rows as CSV with a header.
pub fn write_rows_csv<W: std::io::Write>(w: W, rows: &[EstimateRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn sat_term(nu: &NuisanceSet, u: &Unit, spec: &SensitivitySpec) -> Result<f64> {
    let at = nu.at(&u.x);
    let r = u.r as u8 as f64;
    let y = u.y.unwrap_or(0.0);
    let g = spec.gammas;
    Ok(match spec.method {
        Method::Primary => {
            let mu1 = nu.outcome_1.mean(&at.om);
            let mu0 = nu.outcome_0.mean(&at.om);
            if u.r {
                y + at.q_r1() * (y - mu1) - mu0
            } else {
                mu1 - mu0
            }
        }
        Method::Tilting => {
            let t1 = tilted_moments(&nu.outcome_1, &at.om, g.gamma_r1)?;
            let ct = ControlTilt::new(&nu.outcome_0, &at.om, at.pi_r0, g.gamma_r0, g.gamma_s)?;
            let treated = if u.r { y + at.q_r1() * g_kernel(y, t1, g.gamma_r1)? } else { t1.mean() };
            treated - ct.mean()
        }
        Method::J2r => {
            if !u.r {
                return Ok(0.0);
            }
            let ct = ControlTilt::new(&nu.outcome_0, &at.om, at.pi_r0, g.gamma_r0, g.gamma_s)?;
            y - ct.mean()
        }
        Method::Ps => r * y / at.pi_r1,
        Method::Om => nu.outcome_1.mean(&at.om) - nu.outcome_0.mean(&at.om),
    })
}

fn ec_term(nu: &NuisanceSet, u: &Unit, spec: &SensitivitySpec) -> Result<f64> {
    let at = nu.at(&u.x);
    let g = spec.gammas;
    Ok(match spec.method {
        Method::Primary => {
            if !u.r {
                return Ok(0.0);
            }
            let y = u.y.unwrap_or(0.0);
            -at.q_s() * (y - nu.outcome_0.mean(&at.om)) / at.pi_r0
        }
        Method::Tilting | Method::J2r => {
            let ct = ControlTilt::new(&nu.outcome_0, &at.om, at.pi_r0, g.gamma_r0, g.gamma_s)?;
            let h = h_kernel(&ct, u.r, u.y, g.gamma_r0, g.gamma_s)?;
            let w = if spec.method == Method::J2r { at.pi_r1 } else { 1.0 };
            -at.q_s() * w * h
        }
        Method::Ps => {
            if !u.r {
                return Ok(0.0);
            }
            -at.q_s() * u.y.unwrap_or(0.0) / at.pi_r0
        }
        Method::Om => 0.0,
    })
}

/// Per-unit terms `T_i` with `τ̂ = Σ T_i / N_R`.
pub fn unit_terms(ds: &Dataset, nu: &NuisanceSet, spec: &SensitivitySpec) -> Result<Vec<f64>> {
    if !spec.gammas.is_finite() {
        return Err(Error::InvalidArgument("sensitivity parameters must be finite".into()));
    }
    ds.units()
        .iter()
        .map(|u| if u.s { sat_term(nu, u, spec) } else { ec_term(nu, u, spec) })
        .collect()
}

/// Point estimate for any method, without standard errors.
pub fn estimate(ds: &Dataset, nu: &NuisanceSet, spec: &SensitivitySpec) -> Result<Estimate> {
    ds.require_estimable()?;
    let spec = SensitivitySpec::new(spec.method, spec.gammas);
    let terms = unit_terms(ds, nu, &spec)?;
    let n_r = ds.n_r();
    let tau_hat = terms.iter().sum::<f64>() / n_r as f64;
    if !tau_hat.is_finite() {
        return Err(Error::TiltOverflow { gamma: spec.gammas.gamma_s + spec.gammas.gamma_r0 });
    }
    let scale = ds.n() as f64 / n_r as f64;
    let contributions = terms
        .iter()
        .zip(ds.units())
        .map(|(t, u)| scale * (t - if u.s { tau_hat } else { 0.0 }))
        .collect();
    Ok(Estimate {
        method: spec.method,
        gammas: spec.gammas,
        tau_hat,
        se: None,
        ci: None,
        alpha: None,
        n_r,
        n_e: ds.n_e(),
        b: None,
        seed: None,
        contributions,
    })
}

pub fn estimate_primary(ds: &Dataset, nu: &NuisanceSet) -> Result<Estimate> {
    estimate(ds, nu, &SensitivitySpec::primary())
}

pub fn estimate_tilting(ds: &Dataset, nu: &NuisanceSet, g: GammaTriple) -> Result<Estimate> {
    estimate(ds, nu, &SensitivitySpec::new(Method::Tilting, g))
}

pub fn estimate_j2r(ds: &Dataset, nu: &NuisanceSet, gamma_r0: f64, gamma_s: f64) -> Result<Estimate> {
    estimate(ds, nu, &SensitivitySpec::new(Method::J2r, GammaTriple::new(gamma_s, gamma_r0, 0.0)))
}

pub fn estimate_ps(ds: &Dataset, nu: &NuisanceSet) -> Result<Estimate> {
    estimate(ds, nu, &SensitivitySpec::new(Method::Ps, GammaTriple::ZERO))
}

pub fn estimate_om(ds: &Dataset, nu: &NuisanceSet) -> Result<Estimate> {
    estimate(ds, nu, &SensitivitySpec::new(Method::Om, GammaTriple::ZERO))
}

/// Resample within `S=1` and `S=0` separately, keeping both sizes.
pub fn stratified_resample(ds: &Dataset, seed: u64, replicate: u64, attempt: u64) -> Dataset {
    use rand::Rng;
    let mut rng = stream(seed, &[replicate, attempt]);
    let (sat, ec): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| ds.units()[i].s);
    let mut idx = Vec::with_capacity(ds.n());
    for arm in [&sat, &ec] {
        for _ in 0..arm.len() {
            idx.push(arm[rng.gen_range(0..arm.len())]);
        }
    }
    ds.resample(&idx)
}

fn replicate_estimates(
    ds: &Dataset,
    cfg: &NuisanceConfig,
    specs: &[SensitivitySpec],
    seed: u64,
    b: usize,
) -> Result<Vec<Result<f64>>> {
    let mut last = None;
    for attempt in 0..MAX_REDRAWS as u64 {
        let rep = stratified_resample(ds, seed, b as u64, attempt);
        let mut rcfg = cfg.clone();
        rcfg.mixture.seed = derive_seed(seed, &[b as u64, attempt, 1]);
        match fit_nuisances(&rep, &rcfg) {
            Ok(nu) => {
                return Ok(specs.iter().map(|s| estimate(&rep, &nu, s).map(|e| e.tau_hat)).collect());
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Bootstrap(format!(
        "replicate {b} failed after {MAX_REDRAWS} draws: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn check_bootstrap_args(b: usize, alpha: f64) -> Result<()> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs B >= 2 (got {b})")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1) (got {alpha})")));
    }
    Ok(())
}

/// Point estimates on `ds` with `nu` plus bootstrap standard errors for
/// several specifications sharing the same replicates.
///
/// Each replicate refits the nuisances (with `nu.config`) once and evaluates
/// every spec. The outer error is reserved for replicates that cannot be
/// drawn; per-spec failures are returned in place.
pub fn bootstrap_many(
    ds: &Dataset,
    nu: &NuisanceSet,
    specs: &[SensitivitySpec],
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Result<Estimate>>> {
    check_bootstrap_args(b, alpha)?;
    let points: Vec<Result<Estimate>> = specs.iter().map(|s| estimate(ds, nu, s)).collect();
    let reps: Vec<Vec<Result<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| replicate_estimates(ds, &nu.config, specs, seed, i))
        .collect::<Result<_>>()?;
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(j, point)| {
            let point = point?;
            let vals: Vec<f64> = reps
                .iter()
                .map(|r| match &r[j] {
                    Ok(v) => Ok(*v),
                    Err(e) => Err(Error::Bootstrap(format!("replicate failed: {e}"))),
                })
                .collect::<Result<_>>()?;
            Ok(point.with_bootstrap(sample_sd(&vals), alpha, b, seed))
        })
        .collect())
}

/// Fit nuisances on `ds`, estimate `spec` and attach a bootstrap Wald CI.
pub fn bootstrap(
    ds: &Dataset,
    cfg: &NuisanceConfig,
    spec: &SensitivitySpec,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<Estimate> {
    check_bootstrap_args(b, alpha)?;
    let nu = fit_nuisances(ds, cfg)?;
    bootstrap_many(ds, &nu, std::slice::from_ref(spec), b, alpha, seed)?.pop().expect("one spec")
}

#[derive(Debug)]
pub struct GridRow {
    pub gammas: GammaTriple,
    pub result: Result<Estimate>,
}

/// One estimate per grid point with nuisances fitted once. `b = 0` skips
/// the bootstrap.
pub fn sensitivity_grid(
    ds: &Dataset,
    nu: &NuisanceSet,
    grid: &[GammaTriple],
    method: Method,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<GridRow>> {
    let specs: Vec<SensitivitySpec> = grid.iter().map(|g| SensitivitySpec::new(method, *g)).collect();
    let results = if b == 0 {
        specs.iter().map(|s| estimate(ds, nu, s)).collect()
    } else {
        bootstrap_many(ds, nu, &specs, b, alpha, seed)?
    };
    Ok(grid.iter().zip(results).map(|(g, result)| GridRow { gammas: *g, result }).collect())
}
