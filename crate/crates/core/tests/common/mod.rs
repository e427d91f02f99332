#![allow(dead_code)]

use ectsens::nuisance::{LogisticModel, MixtureOutcomeModel, NuisanceConfig, NuisanceSet};
use ectsens::rng::{stream, StreamRng};
use rand::Rng;

const GK_NODES: [f64; 8] = [
    0.991455371120812639,
    0.949107912342758525,
    0.864864423359769073,
    0.741531185599394440,
    0.586087235467691130,
    0.405845151377397167,
    0.207784955007898468,
    0.000000000000000000,
];
const GK_WK: [f64; 8] = [
    0.022935322010529225,
    0.063092092629978553,
    0.104790010322250184,
    0.140653259715525919,
    0.169004726639267903,
    0.190350578064785410,
    0.204432940075298892,
    0.209482141084727828,
];
const GK_WG: [f64; 4] = [0.129484966168869693, 0.279705391489276668, 0.381830050505118945, 0.417959183673469388];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * GK_WK[7];
    let mut gauss = fc * GK_WG[3];
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        kron += GK_WK[i] * s;
        if i % 2 == 1 {
            gauss += GK_WG[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol.max(1e-300) || depth > 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(&f, a, b, tol, 0)
}

fn normal_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// `E[Y^power e^{γY}]` under the mixture at `features`, by quadrature.
pub fn quad_moment(model: &MixtureOutcomeModel, features: &[f64], gamma: f64, power: i32) -> f64 {
    let mut total = 0.0;
    for k in 0..model.k() {
        let mu = model.component_mean(k, features);
        let s = model.sigmas[k];
        let centre = mu + gamma * s * s;
        let f = |y: f64| y.powi(power) * (gamma * y).exp() * normal_pdf(y, mu, s);
        let scale = (gamma * mu + 0.5 * gamma * gamma * s * s).exp() * (1.0 + centre.abs() + s);
        total += model.weights[k] * integrate(f, centre - 14.0 * s, centre + 14.0 * s, 1e-14 * scale);
    }
    total
}

pub fn random_mixture(rng: &mut StreamRng, p: usize, max_k: usize) -> MixtureOutcomeModel {
    let k = rng.gen_range(1..=max_k);
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let tot: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / tot).collect();
    let betas = (0..k).map(|_| (0..=p).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let sigmas = (0..k).map(|_| rng.gen_range(0.2..3.0)).collect();
    MixtureOutcomeModel::from_parts(weights, betas, sigmas)
}

/// Nuisance set with the given pieces and raw features.
pub fn nuisance_set(
    pi_s: LogisticModel,
    pi_r1: LogisticModel,
    pi_r0: LogisticModel,
    outcome_1: MixtureOutcomeModel,
    outcome_0: MixtureOutcomeModel,
) -> NuisanceSet {
    NuisanceSet {
        pi_s,
        pi_r1,
        pi_r0,
        outcome_1,
        outcome_0,
        p_s1: 0.5,
        config: NuisanceConfig { k_grid: vec![1], ..NuisanceConfig::default() },
        standardizer: None,
    }
}

/// Independent rewrite of the external-control augmentation in centred
/// form, with the tilted moments summed directly.
pub fn h_centred(model: &MixtureOutcomeModel, features: &[f64], pi_r0: f64, r: bool, y: f64, g_r0: f64, g_s: f64) -> f64 {
    let c = |g: f64| -> f64 {
        (0..model.k())
            .map(|k| {
                let mu = model.component_mean(k, features);
                let s2 = model.sigmas[k].powi(2);
                model.weights[k] * (mu * g + 0.5 * g * g * s2).exp()
            })
            .sum()
    };
    let b = |g: f64| -> f64 {
        (0..model.k())
            .map(|k| {
                let mu = model.component_mean(k, features);
                let s2 = model.sigmas[k].powi(2);
                model.weights[k] * (mu + g * s2) * (mu * g + 0.5 * g * g * s2).exp()
            })
            .sum()
    };
    let (cs, bs, cr, csum, bsum) = (c(g_s), b(g_s), c(g_r0), c(g_s + g_r0), b(g_s + g_r0));
    let d = pi_r0 * bs * cr + (1.0 - pi_r0) * bsum;
    let e = pi_r0 * cs * cr + (1.0 - pi_r0) * csum;
    let q = (1.0 - pi_r0) / pi_r0;
    let rr = if r { 1.0 } else { 0.0 };
    let m1 = bs * cr - bsum;
    let m2 = cs * cr - csum;
    let mut h = (rr - pi_r0) * m1 / e - (rr - pi_r0) * d * m2 / (e * e);
    if r {
        let num = cr * (y * (g_s * y).exp() - bs)
            + bs * ((g_r0 * y).exp() - cr)
            + q * (y * ((g_s + g_r0) * y).exp() - bsum);
        let den = cr * ((g_s * y).exp() - cs) + cs * ((g_r0 * y).exp() - cr) + q * (((g_s + g_r0) * y).exp() - csum);
        h += num / e - d * den / (e * e);
    }
    h
}

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, &[])
}
