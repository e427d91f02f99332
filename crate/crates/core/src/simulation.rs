//! Simulation design for externally controlled single-arm trials with
//! intercurrent events, a Monte Carlo truth oracle and a replication
//! harness.
//!
//! Covariates: `X_1..X_4 ~ N(0.25, 1)`, `X_5 ~ Bernoulli(0.5)`, with
//! `Z_j = (X_j² + 2 sin X_j − 1.5)/√2` and `Z_5 = X_5`. Potential outcomes
//! share one noise draw: `Y(0) = ΣZ/3 + ε`, `Y(1) = ΣZ/2 + ε`.
//!
//! ```text
//! P(S=1 | X, Y(0))      = expit(α_S + 0.1 ΣZ + γ_S Y(0))
//! P(R=0 | X, Y(s), S=s) = expit(−α_Rs − ΣZ/6 + γ_Rs Y(s))
//! ```

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Unit};
use crate::error::{Error, Result};
use crate::estimators::{bootstrap_many, estimate, Estimate, Method, SensitivitySpec};
use crate::features::{z_scalar, FeatureMap, CONTINUOUS_COVARIATES};
use crate::nuisance::{expit, fit_nuisances, NuisanceConfig};
use crate::rng::{derive_seed, stream};
use crate::tilting::GammaTriple;

pub const N_COVARIATES: usize = 5;
const X_MEAN: f64 = 0.25;
const STREAM_DATA: u64 = 0x6461_7461;
const STREAM_ORACLE: u64 = 0x6f72_6163;
/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DGPConfig {
    pub n_r_target: usize,
    pub n_e_target: usize,
    /// Outcome-dependent selection strengths; zero gives the unconfounded design.
    pub gammas: GammaTriple,
    pub seed: u64,
    pub oracle_draws: usize,
    /// Trial units with an intercurrent event follow the control outcome law.
    pub j2r_variant: bool,
    /// Fix covariates where every `Z_j` is zero, so the effect vanishes.
    pub zero_signal: bool,
}

impl Default for DGPConfig {
    fn default() -> Self {
        Self {
            n_r_target: 200,
            n_e_target: 500,
            gammas: GammaTriple::ZERO,
            seed: 0,
            oracle_draws: 1_000_000,
            j2r_variant: false,
            zero_signal: false,
        }
    }
}

impl DGPConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_r_target == 0 || self.n_e_target == 0 {
            return Err(Error::InvalidArgument("target sample sizes must be positive".into()));
        }
        if self.oracle_draws < 100_000 {
            return Err(Error::InvalidArgument("oracle_draws must be at least 1e5".into()));
        }
        if !self.gammas.is_finite() {
            return Err(Error::InvalidArgument("DGP gammas must be finite".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_r_target + self.n_e_target
    }

    fn s_share(&self) -> f64 {
        self.n_r_target as f64 / self.n() as f64
    }
}

/// Potential outcomes and assignments of one simulated unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub y0: f64,
    /// Treatment-policy outcome under treatment.
    pub y1: f64,
    pub s: bool,
    pub r: bool,
}

/// Root of `x² + 2 sin x = 1.5` on `[0, 1.5]`, where `Z_j = 0`.
pub fn z_root() -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if z_scalar(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `n × 5` covariate draws.
pub fn draw_covariates<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let bern = Bernoulli::new(0.5).expect("valid probability");
    (0..n)
        .map(|_| {
            let mut x: Vec<f64> = (0..CONTINUOUS_COVARIATES)
                .map(|_| X_MEAN + Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            x.push(bern.sample(rng) as u8 as f64);
            x
        })
        .collect()
}

/// Bisection for `α` with `mean expit(α + lp_i) = target`.
pub fn solve_intercept(target_mean: f64, linear_predictors: &[f64]) -> Result<f64> {
    if !(target_mean > 0.0 && target_mean < 1.0) {
        return Err(Error::InvalidArgument(format!("target mean must lie in (0,1) (got {target_mean})")));
    }
    if linear_predictors.is_empty() {
        return Err(Error::InvalidArgument("no linear predictors".into()));
    }
    let n = linear_predictors.len() as f64;
    let f = |a: f64| linear_predictors.iter().map(|lp| expit(a + lp)).sum::<f64>() / n - target_mean;
    let (mut lo, mut hi) = (-20.0, 20.0);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::Bracket(format!("target {target_mean} not attainable on [-20, 20]")));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

struct Population {
    x: Vec<Vec<f64>>,
    latent: Vec<Latent>,
    /// Observed outcome under treatment when no intercurrent event occurs.
    y11: Vec<f64>,
}

fn simulate<R: Rng + ?Sized>(cfg: &DGPConfig, n: usize, rng: &mut R) -> Result<Population> {
    let x = if cfg.zero_signal {
        let r = z_root();
        let mut row = vec![r; CONTINUOUS_COVARIATES];
        row.push(0.0);
        vec![row; n]
    } else {
        draw_covariates(n, rng)
    };
    let sum_z: Vec<f64> = x
        .iter()
        .map(|row| row[..CONTINUOUS_COVARIATES].iter().map(|&v| z_scalar(v)).sum::<f64>() + row[4])
        .collect();
    let eps: Vec<f64> = (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect();
    let y0: Vec<f64> = sum_z.iter().zip(&eps).map(|(z, e)| z / 3.0 + e).collect();
    let y11: Vec<f64> = sum_z.iter().zip(&eps).map(|(z, e)| z / 2.0 + e).collect();

    let g = cfg.gammas;
    let lp_s: Vec<f64> = sum_z.iter().zip(&y0).map(|(z, y)| 0.1 * z + g.gamma_s * y).collect();
    let alpha_s = solve_intercept(cfg.s_share(), &lp_s)?;
    let s: Vec<bool> = lp_s.iter().map(|lp| rng.gen::<f64>() < expit(alpha_s + lp)).collect();

    // P(R=1) = expit(α_Rs + ΣZ/6 − γ_Rs Y(s)), intercept solved per arm
    let lp_r: Vec<f64> = (0..n)
        .map(|i| {
            let (gamma, y) = if s[i] { (g.gamma_r1, y11[i]) } else { (g.gamma_r0, y0[i]) };
            sum_z[i] / 6.0 - gamma * y
        })
        .collect();
    let mut alpha_r = [0.0; 2];
    for arm in [false, true] {
        let lps: Vec<f64> = (0..n).filter(|&i| s[i] == arm).map(|i| lp_r[i]).collect();
        if !lps.is_empty() {
            alpha_r[arm as usize] = solve_intercept(0.5, &lps)?;
        }
    }
    let r: Vec<bool> = (0..n).map(|i| rng.gen::<f64>() < expit(alpha_r[s[i] as usize] + lp_r[i])).collect();

    let latent = (0..n)
        .map(|i| {
            let y1 = if cfg.j2r_variant && !r[i] { y0[i] } else { y11[i] };
            Latent { y0: y0[i], y1, s: s[i], r: r[i] }
        })
        .collect();
    Ok(Population { x, latent, y11 })
}

/// One simulated dataset with `n_r_target + n_e_target` units and its latent
/// variables. Deterministic in `cfg.seed`.
pub fn generate(cfg: &DGPConfig) -> Result<(Dataset, Vec<Latent>)> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, &[STREAM_DATA]);
    let pop = simulate(cfg, cfg.n(), &mut rng)?;
    let units = pop
        .x
        .into_iter()
        .zip(&pop.latent)
        .zip(&pop.y11)
        .map(|((x, l), &y11)| {
            let y = l.r.then(|| if l.s { y11 } else { l.y0 });
            Unit::new(x, l.s, l.r, y)
        })
        .collect();
    let names = (1..=N_COVARIATES).map(|j| format!("x{j}")).collect();
    Ok((Dataset::new(units, Some(names))?, pop.latent))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueTau {
    pub tau: f64,
    /// Monte Carlo standard error.
    pub se: f64,
    pub n_treated: usize,
}

/// Mean of `Y(1) − Y(0)` among simulated trial participants.
pub fn true_tau(cfg: &DGPConfig, draws: usize) -> Result<TrueTau> {
    cfg.validate()?;
    if draws < 100_000 {
        return Err(Error::InvalidArgument("truth oracle needs at least 1e5 draws".into()));
    }
    let mut rng = stream(cfg.seed, &[STREAM_ORACLE]);
    let pop = simulate(cfg, draws, &mut rng)?;
    let diffs: Vec<f64> = pop.latent.iter().filter(|l| l.s).map(|l| l.y1 - l.y0).collect();
    let n = diffs.len() as f64;
    let tau = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - tau).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(TrueTau { tau, se: (var / n).sqrt(), n_treated: diffs.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub dgp: DGPConfig,
    pub nuisance: NuisanceConfig,
    pub specs: Vec<SensitivitySpec>,
    /// Bootstrap replicates per dataset; 0 disables intervals.
    pub b: usize,
    pub alpha: f64,
    /// Known truth; computed by [`true_tau`] when absent.
    pub truth: Option<f64>,
}

impl Scenario {
    pub fn new(label: impl Into<String>, dgp: DGPConfig, nuisance: NuisanceConfig, specs: Vec<SensitivitySpec>) -> Self {
        Self { label: label.into(), dgp, nuisance, specs, b: 50, alpha: 0.05, truth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCRow {
    pub scenario: String,
    pub method: Method,
    pub gamma_s: f64,
    pub gamma_r0: f64,
    pub gamma_r1: f64,
    pub truth: f64,
    pub bias: f64,
    pub se: f64,
    pub mse: f64,
    pub coverage: Option<f64>,
    pub ci_width: Option<f64>,
    pub n_reps: usize,
    pub n_failed: usize,
    /// Largest `|mean contribution|` over replications.
    pub max_abs_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MCTable {
    pub rows: Vec<MCRow>,
}

impl MCTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn extend(&mut self, other: MCTable) {
        self.rows.extend(other.rows);
    }
}

fn one_replication(sc: &Scenario, rep: u64, seed: u64) -> Result<Vec<Result<Estimate>>> {
    let dgp = DGPConfig { seed: derive_seed(seed, &[rep, 0]), ..sc.dgp.clone() };
    let (ds, _) = generate(&dgp)?;
    let mut ncfg = sc.nuisance.clone();
    ncfg.mixture.seed = derive_seed(seed, &[rep, 1]);
    let nu = fit_nuisances(&ds, &ncfg)?;
    if sc.b == 0 {
        Ok(sc.specs.iter().map(|s| estimate(&ds, &nu, s)).collect())
    } else {
        bootstrap_many(&ds, &nu, &sc.specs, sc.b, sc.alpha, derive_seed(seed, &[rep, 2]))
    }
}

fn summarise(label: &str, spec: &SensitivitySpec, truth: f64, ests: &[&Estimate], n_failed: usize) -> MCRow {
    let n = ests.len() as f64;
    let taus: Vec<f64> = ests.iter().map(|e| e.tau_hat).collect();
    let mean = taus.iter().sum::<f64>() / n;
    let sd = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mse = taus.iter().map(|t| (t - truth).powi(2)).sum::<f64>() / n;
    let cis: Vec<(f64, f64)> = ests.iter().filter_map(|e| e.ci).collect();
    let (coverage, ci_width) = if cis.len() == ests.len() && !cis.is_empty() {
        let cov = cis.iter().filter(|(lo, hi)| *lo <= truth && truth <= *hi).count() as f64 / n;
        let w = cis.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / n;
        (Some(cov), Some(w))
    } else {
        (None, None)
    };
    MCRow {
        scenario: label.to_string(),
        method: spec.method,
        gamma_s: spec.gammas.gamma_s,
        gamma_r0: spec.gammas.gamma_r0,
        gamma_r1: spec.gammas.gamma_r1,
        truth,
        bias: mean - truth,
        se: sd,
        mse,
        coverage,
        ci_width,
        n_reps: ests.len(),
        n_failed,
        max_abs_residual: ests.iter().map(|e| e.residual().abs()).fold(0.0, f64::max),
    }
}

/// Replicate a scenario `n_reps` times; one row per estimator spec.
pub fn run_mc_study(scenario: &Scenario, n_reps: usize, seed: u64) -> Result<MCTable> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be positive".into()));
    }
    if scenario.specs.is_empty() {
        return Err(Error::InvalidArgument("scenario has no estimators".into()));
    }
    let truth = match scenario.truth {
        Some(t) => t,
        None => true_tau(&scenario.dgp, scenario.dgp.oracle_draws)?.tau,
    };
    let reps: Vec<Result<Vec<Result<Estimate>>>> =
        (0..n_reps as u64).into_par_iter().map(|r| one_replication(scenario, r, seed)).collect();

    let allowed = (MAX_FAILURE_RATE * n_reps as f64).floor() as usize;
    let mut rows = Vec::with_capacity(scenario.specs.len());
    for (j, spec) in scenario.specs.iter().enumerate() {
        let mut ok = Vec::with_capacity(n_reps);
        let mut first_err = None;
        for r in &reps {
            match r.as_ref().map(|v| &v[j]) {
                Ok(Ok(e)) => ok.push(e),
                Ok(Err(e)) | Err(e) => {
                    first_err.get_or_insert_with(|| e.to_string());
                }
            }
        }
        let n_failed = n_reps - ok.len();
        if n_failed > allowed || ok.is_empty() {
            return Err(Error::Study(format!(
                "{}: {} of {} replications failed for {} (first error: {})",
                scenario.label,
                n_failed,
                n_reps,
                spec.method,
                first_err.unwrap_or_default()
            )));
        }
        rows.push(summarise(&scenario.label, spec, truth, &ok, n_failed));
    }
    Ok(MCTable { rows })
}

/// Nuisance settings used by the preset studies: single-component outcome
/// models on the chosen feature maps.
pub fn preset_nuisance(ps: FeatureMap, om: FeatureMap) -> NuisanceConfig {
    NuisanceConfig { ps_features: ps, om_features: om, k_grid: vec![1], ..NuisanceConfig::default() }
}

fn yes_no(f: FeatureMap) -> &'static str {
    match f {
        FeatureMap::Z => "yes",
        FeatureMap::Raw => "no",
    }
}

/// Unconfounded design under the four combinations of correctly specified
/// (`Z`-feature) and misspecified (raw-`X`) nuisance models.
pub fn table3a() -> Vec<Scenario> {
    let specs = vec![
        SensitivitySpec::primary(),
        SensitivitySpec::new(Method::Ps, GammaTriple::ZERO),
        SensitivitySpec::new(Method::Om, GammaTriple::ZERO),
    ];
    let mut out = Vec::new();
    for ps in [FeatureMap::Z, FeatureMap::Raw] {
        for om in [FeatureMap::Z, FeatureMap::Raw] {
            let label = format!("ps={},om={}", yes_no(ps), yes_no(om));
            out.push(Scenario::new(label, DGPConfig::default(), preset_nuisance(ps, om), specs.clone()));
        }
    }
    out
}

pub const TABLE3B_GAMMAS: [f64; 7] = [-0.5, -0.3, -0.1, 0.0, 0.1, 0.3, 0.5];

/// Confounded designs with a common selection strength, analysed by the
/// tilting estimator at the true sensitivity parameters.
pub fn table3b() -> Vec<Scenario> {
    TABLE3B_GAMMAS
        .iter()
        .map(|&g| {
            let gammas = GammaTriple::uniform(g);
            let dgp = DGPConfig { gammas, ..DGPConfig::default() };
            Scenario::new(
                format!("gamma={g}"),
                dgp,
                preset_nuisance(FeatureMap::Z, FeatureMap::Z),
                vec![SensitivitySpec::new(Method::Tilting, gammas)],
            )
        })
        .collect()
}

/// Jump-to-reference generating design analysed by the J2R estimator.
pub fn j2r_study() -> Vec<Scenario> {
    let dgp = DGPConfig { j2r_variant: true, ..DGPConfig::default() };
    vec![Scenario::new(
        "j2r",
        dgp,
        preset_nuisance(FeatureMap::Z, FeatureMap::Z),
        vec![SensitivitySpec::new(Method::J2r, GammaTriple::ZERO)],
    )]
}

/// Look up a preset study by name.
pub fn preset(name: &str) -> Result<Vec<Scenario>> {
    match name {
        "table3a" => Ok(table3a()),
        "table3b" => Ok(table3b()),
        "j2r" => Ok(j2r_study()),
        _ => Err(Error::InvalidArgument(format!("unknown preset `{name}` (expected table3a, table3b or j2r)"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_closed_forms() {
        assert!(solve_intercept(0.5, &[0.0; 10]).unwrap().abs() < 1e-9);
        let a = solve_intercept(2.0 / 7.0, &[0.0; 10]).unwrap();
        assert!((a - (0.4f64).ln()).abs() < 1e-9);
        assert!((a + 0.9163).abs() < 1e-4);
        assert!(solve_intercept(1.0, &[0.0]).is_err());
    }

    #[test]
    fn root_zeroes_transform() {
        assert!(z_scalar(z_root()).abs() < 1e-12);
    }

    #[test]
    fn generation_is_reproducible() {
        let cfg = DGPConfig { seed: 11, ..DGPConfig::default() };
        let (a, la) = generate(&cfg).unwrap();
        let (b, lb) = generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }
}
