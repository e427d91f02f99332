//! Finite Gaussian mixtures of linear regressions fitted by EM.
//!
//! Component `k` has constant mixing weight `π_k`, mean `β_kᵀ[1, x]` and
//! constant standard deviation `σ_k`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, mean_var, weighted_least_squares, Design};
use crate::rng::{stream, StreamRng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Components lighter than this are removed.
const MIN_WEIGHT: f64 = 1e-6;
/// Variance floor used when the outcome itself has zero variance.
const ABS_VAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative log-likelihood improvement below which EM stops.
    pub tol: f64,
    /// Component variances are floored at `var_floor · var(Y)`.
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self { restarts: 5, max_iter: 500, tol: 1e-6, var_floor: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureWarning {
    /// Degenerate components were removed, reducing `K`.
    Pruned { from: usize, to: usize },
    MaxIterations,
}

/// EM bookkeeping of the selected restart. Not serialised.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmDiagnostics {
    /// Observed-data log-likelihood after every E-step.
    pub loglik_path: Vec<f64>,
    /// Positions in `loglik_path` where a pruning step changed the model.
    pub prune_points: Vec<usize>,
    /// Largest |Σ_k r_ik − 1| seen over all E-steps.
    pub max_rowsum_error: f64,
    pub n_iter: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOutcomeModel {
    pub weights: Vec<f64>,
    /// Intercept followed by slopes, one vector per component.
    pub betas: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub n_obs: usize,
    #[serde(default)]
    pub warnings: Vec<MixtureWarning>,
    #[serde(skip)]
    pub diagnostics: EmDiagnostics,
}

impl MixtureOutcomeModel {
    /// Model from explicit parameters (likelihood fields left at zero).
    pub fn from_parts(weights: Vec<f64>, betas: Vec<Vec<f64>>, sigmas: Vec<f64>) -> Self {
        assert_eq!(weights.len(), betas.len());
        assert_eq!(weights.len(), sigmas.len());
        Self {
            weights,
            betas,
            sigmas,
            loglik: 0.0,
            bic: 0.0,
            n_obs: 0,
            warnings: Vec::new(),
            diagnostics: EmDiagnostics::default(),
        }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn n_features(&self) -> usize {
        self.betas[0].len() - 1
    }

    /// Component mean `β_kᵀ[1, x]`.
    #[inline]
    pub fn component_mean(&self, k: usize, features: &[f64]) -> f64 {
        let b = &self.betas[k];
        b[0] + dot(&b[1..], features)
    }

    pub fn component_means(&self, features: &[f64]) -> Vec<f64> {
        (0..self.k()).map(|k| self.component_mean(k, features)).collect()
    }

    /// `Σ_k π_k β_kᵀ[1, x]`.
    pub fn mean(&self, features: &[f64]) -> f64 {
        (0..self.k()).map(|k| self.weights[k] * self.component_mean(k, features)).sum()
    }

    /// Conditional variance at `x` by the law of total variance.
    pub fn variance(&self, features: &[f64]) -> f64 {
        let means = self.component_means(features);
        let m: f64 = self.weights.iter().zip(&means).map(|(w, mu)| w * mu).sum();
        self.weights
            .iter()
            .zip(&means)
            .zip(&self.sigmas)
            .map(|((w, mu), s)| w * (s * s + (mu - m).powi(2)))
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = j;
                break;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        self.component_mean(k, features) + self.sigmas[k] * z
    }

    pub fn n_free_params(&self) -> usize {
        let k = self.k();
        k * self.betas[0].len() + k + (k - 1)
    }
}

struct Params {
    weights: Vec<f64>,
    betas: Vec<Vec<f64>>,
    vars: Vec<f64>,
}

struct EmRun {
    params: Params,
    loglik: f64,
    diagnostics: EmDiagnostics,
    warnings: Vec<MixtureWarning>,
}

/// Responsibilities as n rows of length K.
type Resp = Vec<Vec<f64>>;

fn m_step(x: &Design, y: &[f64], resp: &Resp, floor: f64) -> Option<Params> {
    let k = resp[0].len();
    let n = y.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    let mut w = vec![0.0; y.len()];
    for c in 0..k {
        for (wi, r) in w.iter_mut().zip(resp) {
            *wi = r[c];
        }
        let nk: f64 = w.iter().sum();
        let beta = weighted_least_squares(x, y, &w)?;
        let rss: f64 = x
            .rows()
            .zip(y)
            .zip(&w)
            .map(|((row, yi), wi)| wi * (yi - dot(row, &beta)).powi(2))
            .sum();
        weights.push(nk / n);
        vars.push(if nk > 0.0 { (rss / nk).max(floor) } else { floor });
        betas.push(beta);
    }
    Some(Params { weights, betas, vars })
}

/// Returns the log-likelihood and overwrites `resp`; also reports the
/// largest row-sum deviation.
fn e_step(x: &Design, y: &[f64], p: &Params, resp: &mut Resp) -> (f64, f64) {
    let k = p.weights.len();
    let consts: Vec<f64> = (0..k).map(|c| p.weights[c].ln() - 0.5 * (LN_2PI + p.vars[c].ln())).collect();
    let mut ll = 0.0;
    let mut max_err = 0.0f64;
    let mut logd = vec![0.0; k];
    for ((row, yi), r) in x.rows().zip(y).zip(resp.iter_mut()) {
        for c in 0..k {
            let res = yi - dot(row, &p.betas[c]);
            logd[c] = consts[c] - 0.5 * res * res / p.vars[c];
        }
        let m = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logd.iter().map(|l| (l - m).exp()).sum();
        let lse = m + s.ln();
        ll += lse;
        r.resize(k, 0.0);
        let mut sum = 0.0;
        for c in 0..k {
            r[c] = (logd[c] - lse).exp();
            sum += r[c];
        }
        max_err = max_err.max((sum - 1.0).abs());
    }
    (ll, max_err)
}

/// k-means++ seeding on standardised (features, y), nearest-centre hard
/// labels, then blended with random noise.
fn init_resp(x: &Design, y: &[f64], k: usize, rng: &mut StreamRng) -> Resp {
    let n = y.len();
    if k == 1 {
        return vec![vec![1.0]; n];
    }
    let dim = x.ncols(); // features + y, intercept dropped
    let mut pts: Vec<Vec<f64>> = x
        .rows()
        .zip(y)
        .map(|(row, yi)| {
            let mut v = row[1..].to_vec();
            v.push(*yi);
            v
        })
        .collect();
    for j in 0..dim {
        let col: Vec<f64> = pts.iter().map(|p| p[j]).collect();
        let (m, v) = mean_var(&col);
        let sd = if v > 0.0 { v.sqrt() } else { 1.0 };
        for p in pts.iter_mut() {
            p[j] = (p[j] - m) / sd;
        }
    }
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();

    let mut centres: Vec<usize> = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[centres[0]])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centres.push(next);
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &pts[next]));
        }
    }

    pts.iter()
        .map(|p| {
            let label = (0..k)
                .min_by(|&a, &b| dist2(p, &pts[centres[a]]).total_cmp(&dist2(p, &pts[centres[b]])))
                .unwrap();
            let noise: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
            let ns: f64 = noise.iter().sum();
            (0..k)
                .map(|c| 0.7 * (c == label) as u8 as f64 + 0.3 * noise[c] / ns)
                .collect()
        })
        .collect()
}

/// Drop degenerate components: weight below [`MIN_WEIGHT`] or effective size
/// too small to pin down `p + 1` regression coefficients and a variance.
fn prune(resp: &mut Resp, params: &Params, n: usize, n_coef: usize) -> bool {
    let keep: Vec<usize> = (0..params.weights.len())
        .filter(|&c| params.weights[c] >= MIN_WEIGHT && params.weights[c] * n as f64 >= (n_coef + 1) as f64)
        .collect();
    if keep.len() == params.weights.len() || keep.is_empty() {
        return false;
    }
    for r in resp.iter_mut() {
        let mut row: Vec<f64> = keep.iter().map(|&c| r[c]).collect();
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / keep.len() as f64);
        }
        *r = row;
    }
    true
}

fn run_em(x: &Design, y: &[f64], k: usize, cfg: &MixtureConfig, floor: f64, rng: &mut StreamRng) -> Option<EmRun> {
    let n = y.len();
    let mut resp = init_resp(x, y, k, rng);
    let mut diag = EmDiagnostics::default();
    let mut warnings = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut params;
    let mut ll;
    let mut iter = 0;
    loop {
        params = m_step(x, y, &resp, floor)?;
        let mut pruned_now = false;
        let before = params.weights.len();
        while prune(&mut resp, &params, n, x.ncols()) {
            params = m_step(x, y, &resp, floor)?;
            pruned_now = true;
        }
        if pruned_now {
            warnings.push(MixtureWarning::Pruned { from: before, to: params.weights.len() });
            diag.prune_points.push(diag.loglik_path.len());
        }
        let (l, err) = e_step(x, y, &params, &mut resp);
        ll = l;
        diag.max_rowsum_error = diag.max_rowsum_error.max(err);
        diag.loglik_path.push(ll);
        iter += 1;
        if !pruned_now && prev.is_finite() && ll - prev < cfg.tol * prev.abs().max(1.0) {
            diag.converged = true;
            break;
        }
        if iter >= cfg.max_iter {
            warnings.push(MixtureWarning::MaxIterations);
            break;
        }
        prev = ll;
    }
    diag.n_iter = iter;
    Some(EmRun { params, loglik: ll, diagnostics: diag, warnings })
}

/// Fit a `k`-component mixture of linear regressions of `y` on the
/// non-intercept columns of `x`, keeping the best of `cfg.restarts` EM runs.
pub fn fit_mixture(x: &Design, y: &[f64], k: usize, cfg: &MixtureConfig) -> Result<MixtureOutcomeModel> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::InvalidArgument(format!("{} outcomes for {} rows", n, x.nrows())));
    }
    let p = x.ncols() - 1;
    let need = k * (p + 2);
    if k == 0 || need > n {
        return Err(Error::InsufficientData { k, n, need });
    }
    let (_, var_y) = mean_var(y);
    let floor = (cfg.var_floor * var_y).max(ABS_VAR_FLOOR);

    let restarts = if k == 1 { 1 } else { cfg.restarts.max(1) };
    let runs: Vec<Option<EmRun>> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, &[k as u64, i as u64]);
            run_em(x, y, k, cfg, floor, &mut rng)
        })
        .collect();

    let best = runs
        .into_iter()
        .flatten()
        .fold(None::<EmRun>, |best, run| match best {
            Some(b) if b.loglik >= run.loglik => Some(b),
            _ => Some(run),
        })
        .ok_or_else(|| Error::AllFitsFailed(format!("EM for K={k} produced no valid fit")))?;

    let mut model = MixtureOutcomeModel::from_parts(
        best.params.weights,
        best.params.betas,
        best.params.vars.iter().map(|v| v.sqrt()).collect(),
    );
    model.loglik = best.loglik;
    model.n_obs = n;
    model.bic = -2.0 * best.loglik + model.n_free_params() as f64 * (n as f64).ln();
    model.warnings = best.warnings;
    model.diagnostics = best.diagnostics;
    Ok(model)
}

/// Fit every feasible `K` in `k_grid` and keep the smallest BIC (ties go to
/// the smaller `K`).
pub fn select_mixture(x: &Design, y: &[f64], k_grid: &[usize], cfg: &MixtureConfig) -> Result<MixtureOutcomeModel> {
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument("empty K grid".into()));
    }
    let mut ks = k_grid.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut best: Option<MixtureOutcomeModel> = None;
    let mut failures = Vec::new();
    for k in ks {
        match fit_mixture(x, y, k, cfg) {
            Ok(m) => {
                if best.as_ref().map_or(true, |b| m.bic < b.bic) {
                    best = Some(m);
                }
            }
            Err(e) => failures.push(format!("K={k}: {e}")),
        }
    }
    best.ok_or_else(|| Error::AllFitsFailed(failures.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(n: usize, seed: u64) -> (Design, Vec<f64>) {
        let mut rng = stream(seed, &[]);
        let xs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        (Design::with_intercept(xs.iter().map(|x| [*x])), y)
    }

    #[test]
    fn single_component_is_ols() {
        let (x, y) = line_data(300, 3);
        let m = fit_mixture(&x, &y, 1, &MixtureConfig::default()).unwrap();
        let ols = weighted_least_squares(&x, &y, &vec![1.0; y.len()]).unwrap();
        for (a, b) in m.betas[0].iter().zip(&ols) {
            assert!((a - b).abs() < 1e-8);
        }
        let rss: f64 = x.rows().zip(&y).map(|(r, yi)| (yi - dot(r, &ols)).powi(2)).sum();
        assert!((m.sigmas[0] - (rss / y.len() as f64).sqrt()).abs() < 1e-8);
        assert_eq!(m.weights, vec![1.0]);
    }

    #[test]
    fn insufficient_data_is_rejected() {
        let (x, y) = line_data(8, 1);
        let err = fit_mixture(&x, &y, 3, &MixtureConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("insufficient data for 3 components"), "{err}");
    }

    #[test]
    fn constant_outcome_sits_at_floor() {
        let x = Design::with_intercept((0..20).map(|i| [i as f64 * 0.1]));
        let y = vec![4.0; 20];
        let m = fit_mixture(&x, &y, 1, &MixtureConfig::default()).unwrap();
        assert!((m.betas[0][0] - 4.0).abs() < 1e-8);
        assert!((m.sigmas[0] - ABS_VAR_FLOOR.sqrt()).abs() < 1e-15);
        let sel = select_mixture(&x, &y, &[1, 2, 3], &MixtureConfig::default()).unwrap();
        assert_eq!(sel.k(), 1);
    }

    #[test]
    fn infeasible_k_is_skipped() {
        let (x, y) = line_data(10, 2);
        // K=3 needs 9 points for one feature, K=4 needs 12
        let m = select_mixture(&x, &y, &[1, 2, 4], &MixtureConfig::default()).unwrap();
        assert!(m.k() <= 2);
        assert!(select_mixture(&x, &y, &[4, 5], &MixtureConfig::default()).is_err());
    }

    #[test]
    fn em_is_monotone_and_responsibilities_normalised() {
        let mut rng = stream(5, &[]);
        let xs: Vec<f64> = (0..600).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|x| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * x + 0.5 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let x = Design::with_intercept(xs.iter().map(|x| [*x]));
        for k in [2, 3] {
            let m = fit_mixture(&x, &y, k, &MixtureConfig { seed: 9, ..Default::default() }).unwrap();
            let d = &m.diagnostics;
            assert!(d.max_rowsum_error <= 1e-12);
            for w in d.loglik_path.windows(2).enumerate() {
                let (i, pair) = w;
                if d.prune_points.contains(&(i + 1)) {
                    continue;
                }
                assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs().max(1.0), "step {i}: {pair:?}");
            }
            assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
