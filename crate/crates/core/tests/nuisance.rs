mod common;

use ectsens::features::FeatureMap;
use ectsens::linalg::Design;
use ectsens::nuisance::{fit_mixture, fit_nuisances, select_mixture, MixtureConfig, NuisanceConfig, NuisanceSet};
use ectsens::simulation::{generate, DGPConfig};
use ectsens::{load_dataset, Schema};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// y = ±x + N(0, 0.5²) with equal probability, x ~ U(−2, 2).
fn bimodal(n: usize, seed: u64) -> (Design, Vec<f64>) {
    let mut rng = common::rng(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y = xs.iter().map(|&x| if rng.gen_bool(0.5) { x } else { -x } + 0.5 * normal(&mut rng)).collect();
    (Design::with_intercept(xs.iter().map(|&x| [x])), y)
}

fn linear(n: usize, seed: u64) -> (Design, Vec<f64>) {
    let mut rng = common::rng(seed);
    let xs: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let y = xs.iter().map(|&x| 0.5 + 1.5 * x + normal(&mut rng)).collect();
    (Design::with_intercept(xs.iter().map(|&x| [x])), y)
}

#[test]
fn two_component_mixture_is_recovered() {
    let (x, y) = bimodal(5000, 1);
    let m = fit_mixture(&x, &y, 2, &MixtureConfig::default()).unwrap();
    let mut slopes: Vec<(f64, f64)> = (0..2).map(|k| (m.betas[k][1], m.weights[k])).collect();
    slopes.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!((slopes[0].0 + 1.0).abs() < 0.1 && (slopes[1].0 - 1.0).abs() < 0.1, "{slopes:?}");
    assert!(slopes.iter().all(|s| (s.1 - 0.5).abs() < 0.05));
}

#[test]
fn bic_prefers_one_component_for_linear_data() {
    let cfg = MixtureConfig { restarts: 3, ..MixtureConfig::default() };
    let hits = (0..100)
        .filter(|&s| {
            let (x, y) = linear(2000, 100 + s);
            select_mixture(&x, &y, &[1, 2, 3], &cfg).unwrap().k() == 1
        })
        .count();
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn bic_prefers_two_components_for_bimodal_data() {
    let cfg = MixtureConfig { restarts: 3, ..MixtureConfig::default() };
    let hits = (0..100)
        .filter(|&s| {
            let (x, y) = bimodal(2000, 300 + s);
            select_mixture(&x, &y, &[1, 2, 3], &cfg).unwrap().k() == 2
        })
        .count();
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn simulated_design_fits_cleanly() {
    let ds = generate(&DGPConfig { seed: 2, ..DGPConfig::default() }).unwrap().0;
    let nu = fit_nuisances(&ds, &NuisanceConfig { ps_features: FeatureMap::Z, om_features: FeatureMap::Z, ..NuisanceConfig::default() }).unwrap();
    assert!(nu.pi_s.converged && nu.pi_r1.converged && nu.pi_r0.converged);
    let mean_ps = ds.units().iter().map(|u| nu.at(&u.x).pi_s).sum::<f64>() / ds.n() as f64;
    assert!((mean_ps - ds.n_r() as f64 / ds.n() as f64).abs() < 0.02, "{mean_ps}");
    assert!((mean_ps - 200.0 / 700.0).abs() < 0.04);
}

#[test]
fn raw_features_change_the_fit() {
    let ds = generate(&DGPConfig { seed: 3, ..DGPConfig::default() }).unwrap().0;
    let base = NuisanceConfig { k_grid: vec![1], ..NuisanceConfig::default() };
    let z = fit_nuisances(&ds, &NuisanceConfig { ps_features: FeatureMap::Z, om_features: FeatureMap::Z, ..base.clone() }).unwrap();
    let raw = fit_nuisances(&ds, &base).unwrap();
    let x = &ds.units()[0].x;
    assert_ne!(z.at(x).pi_s, raw.at(x).pi_s);
    assert_ne!(z.mu(true, x), raw.mu(true, x));
}

#[test]
fn nuisances_survive_json() {
    let ds = generate(&DGPConfig { seed: 4, ..DGPConfig::default() }).unwrap().0;
    let nu = fit_nuisances(&ds, &NuisanceConfig { k_grid: vec![1, 2], standardize: true, ..NuisanceConfig::default() }).unwrap();
    let back = NuisanceSet::from_json(&nu.to_json().unwrap()).unwrap();
    for u in ds.units().iter().take(20) {
        assert_eq!(nu.at(&u.x), back.at(&u.x));
        assert_eq!(nu.mu(false, &u.x), back.mu(false, &u.x));
    }
}

#[test]
fn fit_is_deterministic_in_seed() {
    let ds = generate(&DGPConfig { seed: 5, ..DGPConfig::default() }).unwrap().0;
    let cfg = NuisanceConfig { k_grid: vec![2], ..NuisanceConfig::default() };
    assert_eq!(fit_nuisances(&ds, &cfg).unwrap(), fit_nuisances(&ds, &cfg).unwrap());
}

#[test]
fn csv_round_trip_through_files() {
    let ds = generate(&DGPConfig { seed: 6, n_r_target: 40, n_e_target: 60, ..DGPConfig::default() }).unwrap().0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.write_csv_path(&path).unwrap();
    let back = load_dataset(&path, &Schema::default()).unwrap();
    assert_eq!(back.units(), ds.units());
    assert_eq!(back.covariate_names(), ds.covariate_names());
    let subset = load_dataset(&path, &Schema::parse("x2,x1,s,r,y").unwrap()).unwrap();
    assert_eq!(subset.p(), 2);
    assert_eq!(subset.units()[0].x, vec![ds.units()[0].x[1], ds.units()[0].x[0]]);
}
