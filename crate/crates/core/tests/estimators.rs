mod common;

use ectsens::estimators::{
    bootstrap, bootstrap_many, estimate, estimate_j2r, estimate_om, estimate_primary, estimate_ps, estimate_tilting,
    sensitivity_grid, stratified_resample, Method, SensitivitySpec,
};
use ectsens::nuisance::{fit_nuisances, LogisticModel, MixtureOutcomeModel, NuisanceConfig, NuisanceSet};
use ectsens::simulation::{generate, DGPConfig};
use ectsens::{Dataset, GammaTriple, Unit};

/// π_S = 0.4, π_R1 = 0.8, π_R0 = 0.5; μ1(x) = 1 + x, μ0(x) = x/2, unit variances.
fn toy_nuisances() -> NuisanceSet {
    common::nuisance_set(
        LogisticModel::constant(0.4, 1),
        LogisticModel::constant(0.8, 1),
        LogisticModel::constant(0.5, 1),
        MixtureOutcomeModel::from_parts(vec![1.0], vec![vec![1.0, 1.0]], vec![1.0]),
        MixtureOutcomeModel::from_parts(vec![1.0], vec![vec![0.0, 0.5]], vec![1.0]),
    )
}

fn toy_data() -> Dataset {
    Dataset::new(
        vec![
            Unit::new(vec![1.0], true, true, Some(2.5)),
            Unit::new(vec![0.0], true, false, None),
            Unit::new(vec![2.0], false, true, Some(0.4)),
            Unit::new(vec![-1.0], false, false, None),
        ],
        None,
    )
    .unwrap()
}

fn sim(seed: u64) -> Dataset {
    generate(&DGPConfig { seed, ..DGPConfig::default() }).unwrap().0
}

fn k1() -> NuisanceConfig {
    NuisanceConfig { k_grid: vec![1], ..NuisanceConfig::default() }
}

#[test]
fn primary_toy_by_hand() {
    // 2.5 + 0.25·0.5 − 0.5, 1 − 0, −(2/3)(0.4 − 1)/0.5, 0
    let expected = (2.125 + 1.0 + 0.8) / 2.0;
    let e = estimate_primary(&toy_data(), &toy_nuisances()).unwrap();
    assert!((e.tau_hat - expected).abs() < 1e-12, "{}", e.tau_hat);
    assert_eq!((e.n_r, e.n_e), (2, 2));
}

#[test]
fn ps_and_om_toy_by_hand() {
    let ps = estimate_ps(&toy_data(), &toy_nuisances()).unwrap();
    assert!((ps.tau_hat - (2.5 / 0.8 - (2.0 / 3.0) * 0.4 / 0.5) / 2.0).abs() < 1e-12);
    let om = estimate_om(&toy_data(), &toy_nuisances()).unwrap();
    assert!((om.tau_hat - (1.5 + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn j2r_toy_at_zero_tilt_by_hand() {
    // SAT: 2.5 − 0.5 and 0; external control: −(2/3)·0.8·(0.4 − 1)/0.5
    let expected = (2.0 + 0.64) / 2.0;
    let e = estimate_j2r(&toy_data(), &toy_nuisances(), 0.0, 0.0).unwrap();
    assert!((e.tau_hat - expected).abs() < 1e-12, "{}", e.tau_hat);
}

/// Closed-form K=1 control mean under tilts, written out directly.
fn control_mean(mu: f64, pi: f64, gr0: f64, gs: f64) -> f64 {
    let c = |g: f64| (g * mu + 0.5 * g * g).exp();
    let b = |g: f64| (mu + g) * c(g);
    let d = pi * b(gs) * c(gr0) + (1.0 - pi) * b(gs + gr0);
    let e = pi * c(gs) * c(gr0) + (1.0 - pi) * c(gs + gr0);
    d / e
}

#[test]
fn j2r_toy_with_tilt_by_hand() {
    let (gr0, gs) = (0.1, 0.2);
    let nu = toy_nuisances();
    let h_c = common::h_centred(&nu.outcome_0, &[2.0], 0.5, true, 0.4, gr0, gs);
    let h_d = common::h_centred(&nu.outcome_0, &[-1.0], 0.5, false, 0.0, gr0, gs);
    let q_s = 0.4 / 0.6;
    let expected = ((2.5 - control_mean(0.5, 0.5, gr0, gs)) - q_s * 0.8 * h_c - q_s * 0.8 * h_d) / 2.0;
    let e = estimate_j2r(&toy_data(), &nu, gr0, gs).unwrap();
    assert!((e.tau_hat - expected).abs() < 1e-12, "{} vs {expected}", e.tau_hat);
}

#[test]
fn tilting_toy_by_hand() {
    let g = GammaTriple::new(0.2, 0.1, -0.3);
    let nu = toy_nuisances();
    // treated side, K=1 μ1 = 2 at x = 1 and 1 at x = 0
    let c1 = |mu: f64| (g.gamma_r1 * mu + 0.5 * g.gamma_r1.powi(2)).exp();
    let gk = |y: f64, mu: f64| (g.gamma_r1 * y).exp() / c1(mu) * (y - (mu + g.gamma_r1));
    let a = 2.5 + 0.25 * gk(2.5, 2.0) - control_mean(0.5, 0.5, g.gamma_r0, g.gamma_s);
    let b = (1.0 + g.gamma_r1) - control_mean(0.0, 0.5, g.gamma_r0, g.gamma_s);
    let q_s = 0.4 / 0.6;
    let c = -q_s * common::h_centred(&nu.outcome_0, &[2.0], 0.5, true, 0.4, g.gamma_r0, g.gamma_s);
    let d = -q_s * common::h_centred(&nu.outcome_0, &[-1.0], 0.5, false, 0.0, g.gamma_r0, g.gamma_s);
    let expected = (a + b + c + d) / 2.0;
    let e = estimate_tilting(&toy_data(), &nu, g).unwrap();
    assert!((e.tau_hat - expected).abs() < 1e-12, "{} vs {expected}", e.tau_hat);
}

#[test]
fn zero_tilt_reduces_to_primary() {
    for seed in 0..5 {
        let ds = sim(seed);
        let nu = fit_nuisances(&ds, &NuisanceConfig { k_grid: vec![1, 2], ..NuisanceConfig::default() }).unwrap();
        let p = estimate_primary(&ds, &nu).unwrap();
        let t = estimate_tilting(&ds, &nu, GammaTriple::ZERO).unwrap();
        assert!((p.tau_hat - t.tau_hat).abs() < 1e-10);
        for eps in [1e-6, -1e-6] {
            let near = estimate_tilting(&ds, &nu, GammaTriple::uniform(eps)).unwrap();
            assert!((near.tau_hat - p.tau_hat).abs() < 1e-4, "eps {eps}: {}", near.tau_hat - p.tau_hat);
        }
    }
}

#[test]
fn j2r_spec_ignores_treated_tilt() {
    let spec = SensitivitySpec::new(Method::J2r, GammaTriple::new(0.1, 0.2, 0.7));
    assert_eq!(spec.gammas.gamma_r1, 0.0);
    let ds = sim(3);
    let nu = fit_nuisances(&ds, &k1()).unwrap();
    let a = estimate(&ds, &nu, &spec).unwrap();
    let b = estimate_j2r(&ds, &nu, 0.2, 0.1).unwrap();
    assert_eq!(a.tau_hat, b.tau_hat);
}

#[test]
fn location_shift_leaves_estimates_unchanged() {
    let kappa = 10.0;
    let ds = sim(8);
    let shifted = Dataset::new(
        ds.units().iter().map(|u| Unit::new(u.x.clone(), u.s, u.r, u.y.map(|y| y + kappa))).collect(),
        Some(ds.covariate_names().to_vec()),
    )
    .unwrap();
    let nu = fit_nuisances(&ds, &k1()).unwrap();
    let nu_shift = fit_nuisances(&shifted, &k1()).unwrap();
    for g in [GammaTriple::ZERO, GammaTriple::new(0.2, -0.1, 0.3), GammaTriple::uniform(-0.4)] {
        let a = estimate_tilting(&ds, &nu, g).unwrap();
        let b = estimate_tilting(&shifted, &nu_shift, g).unwrap();
        assert!((a.tau_hat - b.tau_hat).abs() < 1e-8, "{g:?}: {} vs {}", a.tau_hat, b.tau_hat);
    }
}

#[test]
fn contributions_average_to_zero() {
    let ds = sim(4);
    let nu = fit_nuisances(&ds, &k1()).unwrap();
    for m in [Method::Primary, Method::Tilting, Method::J2r, Method::Ps, Method::Om] {
        let e = estimate(&ds, &nu, &SensitivitySpec::new(m, GammaTriple::new(0.1, -0.2, 0.3))).unwrap();
        assert_eq!(e.contributions.len(), ds.n());
        assert!(e.residual().abs() < 1e-10, "{m}: {}", e.residual());
    }
}

#[test]
fn resampling_is_stratified_and_seeded() {
    let ds = sim(5);
    let a = stratified_resample(&ds, 9, 0, 0);
    let b = stratified_resample(&ds, 9, 0, 0);
    let c = stratified_resample(&ds, 9, 1, 0);
    assert_eq!(a.units(), b.units());
    assert_ne!(a.units(), c.units());
    assert_eq!((a.n_r(), a.n_e()), (ds.n_r(), ds.n_e()));
}

#[test]
fn bootstrap_is_deterministic_in_seed() {
    let ds = sim(6);
    let spec = SensitivitySpec::primary();
    let a = bootstrap(&ds, &k1(), &spec, 2, 0.05, 17).unwrap();
    let b = bootstrap(&ds, &k1(), &spec, 2, 0.05, 17).unwrap();
    let c = bootstrap(&ds, &k1(), &spec, 2, 0.05, 18).unwrap();
    assert_eq!(a.se, b.se);
    assert_eq!(a.ci, b.ci);
    assert_ne!(a.se, c.se);
    let (lo, hi) = a.ci.unwrap();
    let z = 1.959963984540054;
    assert!((hi - lo - 2.0 * z * a.se.unwrap()).abs() < 1e-12);
    assert!(((lo + hi) / 2.0 - a.tau_hat).abs() < 1e-12);
}

#[test]
fn bootstrap_rejects_bad_arguments() {
    let ds = sim(6);
    assert!(bootstrap(&ds, &k1(), &SensitivitySpec::primary(), 1, 0.05, 0).is_err());
    assert!(bootstrap(&ds, &k1(), &SensitivitySpec::primary(), 10, 1.5, 0).is_err());
}

#[test]
fn constant_outcome_gives_zero_effect_and_se() {
    let ds = sim(7);
    let flat = Dataset::new(
        ds.units().iter().map(|u| Unit::new(u.x.clone(), u.s, u.r, u.y.map(|_| 3.0))).collect(),
        None,
    )
    .unwrap();
    let e = bootstrap(&flat, &k1(), &SensitivitySpec::primary(), 20, 0.05, 1).unwrap();
    assert!(e.tau_hat.abs() < 1e-8);
    assert!(e.se.unwrap() < 1e-8);
}

#[test]
fn shared_replicates_match_single_spec_runs() {
    let ds = sim(9);
    let nu = fit_nuisances(&ds, &k1()).unwrap();
    let specs = [SensitivitySpec::primary(), SensitivitySpec::new(Method::Tilting, GammaTriple::uniform(0.2))];
    let many = bootstrap_many(&ds, &nu, &specs, 5, 0.1, 3).unwrap();
    for (spec, got) in specs.iter().zip(many) {
        let one = bootstrap_many(&ds, &nu, std::slice::from_ref(spec), 5, 0.1, 3).unwrap().pop().unwrap().unwrap();
        assert_eq!(got.unwrap().se, one.se);
    }
}

#[test]
fn grid_origin_equals_primary() {
    let ds = sim(10);
    let nu = fit_nuisances(&ds, &k1()).unwrap();
    let vals = [-0.2, 0.0, 0.2];
    let mut grid = Vec::new();
    for &a in &vals {
        for &b in &vals {
            for &c in &vals {
                grid.push(GammaTriple::new(a, b, c));
            }
        }
    }
    let rows = sensitivity_grid(&ds, &nu, &grid, Method::Tilting, 0, 0.05, 0).unwrap();
    assert_eq!(rows.len(), 27);
    let origin = rows.iter().find(|r| r.gammas == GammaTriple::ZERO).unwrap();
    let p = estimate_primary(&ds, &nu).unwrap();
    assert!((origin.result.as_ref().unwrap().tau_hat - p.tau_hat).abs() < 1e-10);
    assert!(rows.iter().all(|r| r.result.as_ref().unwrap().se.is_none()));
}

#[test]
fn grid_decreases_in_participation_tilt() {
    for seed in 11..14 {
        let ds = sim(seed);
        let nu = fit_nuisances(&ds, &k1()).unwrap();
        let grid: Vec<GammaTriple> = (-5..=5).map(|i| GammaTriple::new(i as f64 * 0.1, 0.1, 0.0)).collect();
        let taus: Vec<f64> = sensitivity_grid(&ds, &nu, &grid, Method::Tilting, 0, 0.05, 0)
            .unwrap()
            .into_iter()
            .map(|r| r.result.unwrap().tau_hat)
            .collect();
        assert!(taus.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {taus:?}");
    }
}

#[test]
fn grid_with_bootstrap_attaches_intervals() {
    let ds = sim(12);
    let nu = fit_nuisances(&ds, &k1()).unwrap();
    let grid = [GammaTriple::ZERO, GammaTriple::uniform(0.1)];
    let rows = sensitivity_grid(&ds, &nu, &grid, Method::Tilting, 4, 0.05, 2).unwrap();
    for r in rows {
        let e = r.result.unwrap();
        assert_eq!(e.b, Some(4));
        assert!(e.se.unwrap() > 0.0);
    }
}
