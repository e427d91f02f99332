use std::ffi::OsString;
use std::path::Path;

use ectsens::estimators::{Method, SensitivitySpec};
use ectsens::features::FeatureMap;
use ectsens::simulation::{self, preset_nuisance, DGPConfig, Scenario};
use ectsens::GammaTriple;
use serde::Deserialize;

use crate::CliError;

/// Location of the `--config` value in raw arguments, if any.
fn config_path(argv: &[OsString]) -> Result<Option<OsString>, CliError> {
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return argv
                .get(i + 1)
                .cloned()
                .map(Some)
                .ok_or_else(|| CliError::Usage("--config needs a file".into()));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Ok(Some(v.into()));
        }
    }
    Ok(None)
}

fn flag_given(argv: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    argv.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&eq)
    })
}

fn value_string(key: &str, v: &toml::Value) -> Result<Option<String>, CliError> {
    Ok(match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(_) => None,
        toml::Value::Array(items) => {
            let parts = items
                .iter()
                .map(|it| value_string(key, it)?.ok_or_else(|| CliError::Usage(format!("config key `{key}`: nested booleans are not supported"))))
                .collect::<Result<Vec<_>, _>>()?;
            Some(parts.join(","))
        }
        _ => return Err(CliError::Usage(format!("config key `{key}` must be a scalar or list"))),
    })
}

/// Append flags from the `--config` file that are not already on the
/// command line. Keys are flag names with `_` or `-`.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let table: toml::Table =
        text.parse().map_err(|e| CliError::Usage(format!("config {}: {e}", Path::new(&path).display())))?;
    let mut out = argv;
    let mut extra = Vec::new();
    for (key, value) in &table {
        let flag = format!("--{}", key.replace('_', "-"));
        let flag = if flag == "--b" { "--B".to_string() } else { flag };
        if flag_given(&out, &flag) || flag == "--config" {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => extra.push(OsString::from(flag)),
            toml::Value::Boolean(false) => {}
            v => {
                if let Some(s) = value_string(key, v)? {
                    extra.push(OsString::from(format!("{flag}={s}")));
                }
            }
        }
    }
    out.extend(extra);
    Ok(out)
}

/// Expand `START:STOP:STEP`, a comma-separated list, or a single value.
pub fn parse_values(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |msg: &str| CliError::Usage(format!("invalid grid `{spec}`: {msg}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected START:STOP:STEP"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return Err(bad("need STEP > 0 and STOP >= START"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if n > 100_000 {
            return Err(bad("too many points"));
        }
        (0..n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12 + 0.0).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("no finite values"));
    }
    Ok(values)
}

/// Cartesian product in (γ_S, γ_R0, γ_R1) order, last index fastest.
pub fn expand_grid(s: &[f64], r0: &[f64], r1: &[f64]) -> Vec<GammaTriple> {
    let mut out = Vec::with_capacity(s.len() * r0.len() * r1.len());
    for &a in s {
        for &b in r0 {
            for &c in r1 {
                out.push(GammaTriple::new(a, b, c));
            }
        }
    }
    out
}

pub fn feature_map(s: &str) -> Result<FeatureMap, CliError> {
    s.parse::<FeatureMap>().map_err(|e| CliError::Usage(e.to_string()))
}

/// Flat scenario description for `mc`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub preset: Option<String>,
    pub label: Option<String>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub alpha: Option<f64>,
    pub n_r: Option<usize>,
    pub n_e: Option<usize>,
    /// Confounding strength used for all three selection mechanisms.
    pub dgp_gamma: Option<f64>,
    pub dgp_gamma_s: Option<f64>,
    pub dgp_gamma_r0: Option<f64>,
    pub dgp_gamma_r1: Option<f64>,
    pub j2r_variant: Option<bool>,
    pub oracle_draws: Option<usize>,
    pub truth: Option<f64>,
    pub ps_features: Option<String>,
    pub om_features: Option<String>,
    pub k_grid: Option<Vec<usize>>,
    pub restarts: Option<usize>,
    pub methods: Option<Vec<String>>,
    /// Analysis sensitivity parameters; default to the design's.
    pub gamma_s: Option<f64>,
    pub gamma_r0: Option<f64>,
    pub gamma_r1: Option<f64>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read scenario {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("scenario {}: {e}", path.display())))
    }

    pub fn preset(name: &str) -> Self {
        Self { preset: Some(name.to_string()), ..Self::default() }
    }

    fn custom(&self) -> Result<Scenario, CliError> {
        let base = DGPConfig::default();
        let u = self.dgp_gamma.unwrap_or(0.0);
        let dgp = DGPConfig {
            n_r_target: self.n_r.unwrap_or(base.n_r_target),
            n_e_target: self.n_e.unwrap_or(base.n_e_target),
            gammas: GammaTriple::new(
                self.dgp_gamma_s.unwrap_or(u),
                self.dgp_gamma_r0.unwrap_or(u),
                self.dgp_gamma_r1.unwrap_or(u),
            ),
            j2r_variant: self.j2r_variant.unwrap_or(false),
            ..base
        };
        let ps = feature_map(self.ps_features.as_deref().unwrap_or("z"))?;
        let om = feature_map(self.om_features.as_deref().unwrap_or("z"))?;
        let analysis = GammaTriple::new(
            self.gamma_s.unwrap_or(dgp.gammas.gamma_s),
            self.gamma_r0.unwrap_or(dgp.gammas.gamma_r0),
            self.gamma_r1.unwrap_or(dgp.gammas.gamma_r1),
        );
        let methods = self.methods.clone().unwrap_or_else(|| vec!["tilting".into()]);
        let specs = methods
            .iter()
            .map(|m| m.parse::<Method>().map(|m| SensitivitySpec::new(m, analysis)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Scenario::new(self.label.clone().unwrap_or_else(|| "custom".into()), dgp, preset_nuisance(ps, om), specs))
    }

    /// Scenarios with file-level overrides applied.
    pub fn scenarios(&self) -> Result<Vec<Scenario>, CliError> {
        let mut list = match &self.preset {
            Some(p) => simulation::preset(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => vec![self.custom()?],
        };
        for sc in &mut list {
            if let Some(b) = self.b {
                sc.b = b;
            }
            if let Some(a) = self.alpha {
                sc.alpha = a;
            }
            if let Some(d) = self.oracle_draws {
                sc.dgp.oracle_draws = d;
            }
            if self.truth.is_some() {
                sc.truth = self.truth;
            }
            if let Some(k) = &self.k_grid {
                sc.nuisance.k_grid = k.clone();
            }
            if let Some(r) = self.restarts {
                sc.nuisance.mixture.restarts = r;
            }
            if self.preset.is_some() {
                if let Some(n) = self.n_r {
                    sc.dgp.n_r_target = n;
                }
                if let Some(n) = self.n_e {
                    sc.dgp.n_e_target = n;
                }
            }
        }
        Ok(list)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_expansion() {
        assert_eq!(parse_values("-0.02:0.02:0.01").unwrap(), vec![-0.02, -0.01, 0.0, 0.01, 0.02]);
        assert_eq!(parse_values("0.1,0.3").unwrap(), vec![0.1, 0.3]);
        assert_eq!(parse_values("0").unwrap(), vec![0.0]);
        assert!(parse_values("1:0:0.1").is_err());
        assert!(parse_values("0:1:0").is_err());
        assert!(parse_values("a,b").is_err());
    }

    #[test]
    fn grid_size() {
        let s = parse_values("-0.02:0.02:0.01").unwrap();
        let r = parse_values("-0.04:0.04:0.02").unwrap();
        assert_eq!(expand_grid(&s, &r, &r).len(), 125);
    }
}
