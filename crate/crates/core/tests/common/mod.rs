#![allow(dead_code)]

use epsqueeze::model::stability_margin;
use epsqueeze::{Complex64, Ext, GaussianState, GreenSet, Mat, ModeParams, Real, SensorConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest stability margin accepted for randomly drawn configurations.
pub const MARGIN: f64 = 0.05;

fn mode_from(u: [f64; 6]) -> ModeParams {
    let gamma0 = 0.1 + 0.9 * u[0];
    let gammac = 0.3 + 1.2 * u[1];
    let kappa = 0.3 * u[2];
    let net = gamma0 + gammac - kappa;
    // below threshold: |ε| < γ/2
    let eps = Complex64::from_polar(0.45 * net * u[3], std::f64::consts::TAU * u[4]);
    ModeParams { delta: 2.0 * u[5] - 1.0, gamma0, gammac, kappa, eps }
}

fn config_from(two: bool, u1: [f64; 6], u2: [f64; 6], g: f64, theta: f64, alpha: f64) -> SensorConfig {
    let modes = if two { vec![mode_from(u1), mode_from(u2)] } else { vec![mode_from(u1)] };
    let g = if two { g } else { 0.0 };
    let driven: Vec<usize> = (0..modes.len()).collect();
    SensorConfig::new(modes, g).with_theta(theta).with_probe(alpha, &driven)
}

/// Stable one- or two-mode configuration with a random probe on every mode.
pub fn random_stable(rng: &mut ChaCha8Rng) -> SensorConfig {
    loop {
        let mut u = || std::array::from_fn::<f64, 6, _>(|_| rng.random::<f64>());
        let (u1, u2) = (u(), u());
        let two = rng.random_bool(0.5);
        let g = 0.5 * rng.random::<f64>();
        let theta = 10f64.powf(-3.0 + 2.0 * rng.random::<f64>());
        let mut c = config_from(two, u1, u2, g, theta, 1.0);
        c.mu_in = (0..c.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        if stability_margin(&c) >= MARGIN {
            return c;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

prop_compose! {
    fn unit6()(v in prop::array::uniform6(0.0f64..1.0)) -> [f64; 6] { v }
}

/// Proptest strategy over stable configurations.
pub fn stable_config() -> impl Strategy<Value = SensorConfig> {
    (any::<bool>(), unit6(), unit6(), 0.0f64..0.5, -3.0f64..-1.0, prop::collection::vec(-2.0f64..2.0, 8))
        .prop_map(|(two, u1, u2, g, lt, mu)| {
            let mut c = config_from(two, u1, u2, g, 10f64.powf(lt), 1.0);
            c.mu_in = mu[..c.dim()].to_vec();
            c
        })
        .prop_filter("stable", |c| stability_margin(c) >= MARGIN)
}

/// Output state in double-double precision.
pub fn state(c: &SensorConfig) -> GaussianState<Ext> {
    epsqueeze::propagate(c, &GreenSet::<Ext>::build(c).unwrap()).unwrap()
}

pub fn rel(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    (a - b).norm_fro() / b.norm_fro().max(f64::MIN_POSITIVE)
}

pub fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

/// Central finite difference of the output mean and covariance in `θ`,
/// step `1e-6·max(1, |θ|)`.
pub fn fd_derivatives(c: &SensorConfig) -> (Vec<f64>, Mat<f64>) {
    let h = 1e-6 * c.theta.abs().max(1.0);
    let p = state(&c.clone().with_theta(c.theta + h));
    let m = state(&c.clone().with_theta(c.theta - h));
    let inv = Ext::from(1.0) / (Ext::from(c.theta + h) - Ext::from(c.theta - h));
    let dmu = p.mu.iter().zip(&m.mu).map(|(&a, &b)| ((a - b) * inv).to_f64()).collect();
    let dv = (&p.v - &m.v).scale(inv).to_f64();
    (dmu, dv)
}

/// Symmetric eigenvalues of a real matrix.
pub fn sym_eigs(m: &Mat<f64>) -> Vec<f64> {
    let n = m.to_nalgebra();
    let s = (&n + n.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().collect()
}
