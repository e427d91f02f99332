//! Nuisance models: participation and intercurrent-event propensities
//! (logistic) and per-arm outcome models (Gaussian mixtures of regressions).

pub mod logistic;
pub mod mixture;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetView};
use crate::error::{Error, Result};
use crate::features::{FeatureMap, Standardizer};
use crate::linalg::Design;
use crate::rng::derive_seed;

pub use logistic::{
    density_ratio_q, expit, fit_logistic, logit, odds, FitWarning, LogisticConfig, LogisticModel, OddsKind,
};
pub use mixture::{fit_mixture, select_mixture, MixtureConfig, MixtureOutcomeModel, MixtureWarning};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    /// Features for the three propensity models.
    pub ps_features: FeatureMap,
    /// Features for the two outcome models.
    pub om_features: FeatureMap,
    pub k_grid: Vec<usize>,
    pub logistic: LogisticConfig,
    pub mixture: MixtureConfig,
    /// z-score covariates before the feature map.
    pub standardize: bool,
}

impl Default for NuisanceConfig {
    fn default() -> Self {
        Self {
            ps_features: FeatureMap::Raw,
            om_features: FeatureMap::Raw,
            k_grid: vec![1, 2, 3],
            logistic: LogisticConfig::default(),
            mixture: MixtureConfig::default(),
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub pi_s: LogisticModel,
    /// Fitted on SAT units.
    pub pi_r1: LogisticModel,
    /// Fitted on external controls.
    pub pi_r0: LogisticModel,
    /// Outcome model for (S=1, R=1).
    pub outcome_1: MixtureOutcomeModel,
    /// Outcome model for (S=0, R=1).
    pub outcome_0: MixtureOutcomeModel,
    /// `N_R / N` of the fitting data.
    pub p_s1: f64,
    pub config: NuisanceConfig,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
}

/// All nuisance quantities at one covariate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceAt {
    pub pi_s: f64,
    pub pi_r1: f64,
    pub pi_r0: f64,
    /// Outcome-model features.
    pub om: Vec<f64>,
}

impl NuisanceAt {
    pub fn q_s(&self) -> f64 {
        odds(self.pi_s, OddsKind::Participation)
    }

    pub fn q_r1(&self) -> f64 {
        odds(self.pi_r1, OddsKind::Response)
    }

    pub fn q_r0(&self) -> f64 {
        odds(self.pi_r0, OddsKind::Response)
    }
}

impl NuisanceSet {
    fn prepared(&self, x: &[f64]) -> Vec<f64> {
        match &self.standardizer {
            Some(st) => st.apply(x),
            None => x.to_vec(),
        }
    }

    pub fn ps_features(&self, x: &[f64]) -> Vec<f64> {
        self.config.ps_features.apply(&self.prepared(x))
    }

    pub fn om_features(&self, x: &[f64]) -> Vec<f64> {
        self.config.om_features.apply(&self.prepared(x))
    }

    pub fn at(&self, x: &[f64]) -> NuisanceAt {
        let z = self.prepared(x);
        let ps = self.config.ps_features.apply(&z);
        NuisanceAt {
            pi_s: self.pi_s.predict(&ps),
            pi_r1: self.pi_r1.predict(&ps),
            pi_r0: self.pi_r0.predict(&ps),
            om: self.config.om_features.apply(&z),
        }
    }

    pub fn outcome(&self, s: bool) -> &MixtureOutcomeModel {
        if s {
            &self.outcome_1
        } else {
            &self.outcome_0
        }
    }

    /// `μ_s(x)`.
    pub fn mu(&self, s: bool, x: &[f64]) -> f64 {
        self.outcome(s).mean(&self.om_features(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn response_model(view: &DatasetView<'_>, ns: &NuisanceSet, cfg: &LogisticConfig) -> Result<LogisticModel> {
    let labels: Vec<bool> = view.iter().map(|u| u.r).collect();
    let n_features = ns.config.ps_features.apply(&view.iter().next().unwrap().x).len();
    if labels.iter().all(|&r| r) {
        // no intercurrent events in this arm
        return Ok(LogisticModel::constant(1.0, n_features));
    }
    let design = Design::with_intercept(view.iter().map(|u| ns.ps_features(&u.x)));
    fit_logistic(&design, &labels, cfg)
}

/// Fit every nuisance model on `ds`.
pub fn fit_nuisances(ds: &Dataset, cfg: &NuisanceConfig) -> Result<NuisanceSet> {
    ds.require_estimable()?;
    let standardizer = cfg.standardize.then(|| Standardizer::fit(ds));

    // placeholder models let the feature helpers run before fitting
    let p_feat = cfg.ps_features.apply(&ds.units()[0].x).len();
    let o_feat = cfg.om_features.apply(&ds.units()[0].x).len();
    let mut ns = NuisanceSet {
        pi_s: LogisticModel::constant(0.5, p_feat),
        pi_r1: LogisticModel::constant(0.5, p_feat),
        pi_r0: LogisticModel::constant(0.5, p_feat),
        outcome_1: MixtureOutcomeModel::from_parts(vec![1.0], vec![vec![0.0; o_feat + 1]], vec![1.0]),
        outcome_0: MixtureOutcomeModel::from_parts(vec![1.0], vec![vec![0.0; o_feat + 1]], vec![1.0]),
        p_s1: ds.n_r() as f64 / ds.n() as f64,
        config: cfg.clone(),
        standardizer,
    };

    let design_all = Design::with_intercept(ds.units().iter().map(|u| ns.ps_features(&u.x)));
    let s_labels: Vec<bool> = ds.units().iter().map(|u| u.s).collect();
    let pi_s = fit_logistic(&design_all, &s_labels, &cfg.logistic)?;

    let sat = ds.stratify(true, None).non_empty()?;
    let ec = ds.stratify(false, None).non_empty()?;
    let pi_r1 = response_model(&sat, &ns, &cfg.logistic)?;
    let pi_r0 = response_model(&ec, &ns, &cfg.logistic)?;

    let mut outcomes = Vec::with_capacity(2);
    for s in [true, false] {
        let view = ds.stratify(s, Some(true)).non_empty()?;
        let design = Design::with_intercept(view.iter().map(|u| ns.om_features(&u.x)));
        let y: Vec<f64> = view.iter().map(|u| u.y.expect("validated: r=1 has y")).collect();
        let mcfg = MixtureConfig { seed: derive_seed(cfg.mixture.seed, &[s as u64]), ..cfg.mixture };
        outcomes.push(select_mixture(&design, &y, &cfg.k_grid, &mcfg)?);
    }
    let outcome_0 = outcomes.pop().unwrap();
    let outcome_1 = outcomes.pop().unwrap();

    if !(ns.p_s1 > 0.0 && ns.p_s1 < 1.0) {
        return Err(Error::InvalidDataset("P(S=1) estimate outside (0,1)".into()));
    }
    ns.pi_s = pi_s;
    ns.pi_r1 = pi_r1;
    ns.pi_r0 = pi_r0;
    ns.outcome_1 = outcome_1;
    ns.outcome_0 = outcome_0;
    Ok(ns)
}
