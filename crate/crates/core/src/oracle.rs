//! Independent checks of the frequency-domain pipeline: a deterministic
//! time-domain integration for the mean, an annihilation-operator spectral
//! calculation and a stochastic simulation for the covariance.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{propagate, stability_margin, time_drift, GreenSet, SensorConfig};

/// Oracles refuse systems closer than this to instability.
pub const MIN_MARGIN: f64 = 1e-3;

/// Sign of the conjugated gain-bath input in the Langevin equations.
const GAIN_SIGN: f64 = -1.0;

fn ensure_stable(config: &SensorConfig, min_margin: f64) -> Result<f64> {
    config.validate()?;
    let margin = stability_margin(config);
    if !(margin >= min_margin) {
        return Err(Error::Unstable { margin });
    }
    Ok(margin)
}

/// Fastest rate in the problem: drift spectral radius, the largest mode
/// rate, or the sideband frequency.
fn max_rate(config: &SensorConfig) -> f64 {
    let rho = time_drift(config).complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rates = config.modes.iter().map(|m| (m.gamma0 + m.gammac + m.kappa) / 2.0 + m.eps.norm()).fold(0.0, f64::max);
    rho.max(rates).max(config.omega.abs()).max(1e-12)
}

/// Deterministic part of the Langevin equations, without inputs.
fn drift(config: &SensorConfig, a: &[Complex64], out: &mut [Complex64]) {
    let n = a.len();
    for j in 0..n {
        let m = &config.modes[j];
        let diag = Complex64::new(-m.gamma_net() / 2.0, -(m.delta + config.theta));
        let mut nb = Complex64::new(0.0, 0.0);
        if j > 0 {
            nb += a[j - 1];
        }
        if j + 1 < n {
            nb += a[j + 1];
        }
        out[j] = diag * a[j] - Complex64::new(0.0, config.g) * nb + m.eps * a[j].conj();
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// Step size; defaults to a hundredth of the fastest time scale.
    pub dt: Option<f64>,
    /// Give up after this much simulated time.
    pub max_duration: Option<f64>,
    /// Relative change between successive windows that counts as settled.
    pub tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { dt: None, max_duration: None, tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct OdeMean {
    /// Output mean quadratures (`4N`).
    pub mu_out: Vec<f64>,
    /// Intracavity mean quadratures (`4N`).
    pub intracavity: Vec<f64>,
    /// Simulated time until convergence.
    pub duration: f64,
    pub dt: f64,
}

/// Integrates the noiseless Langevin equations driven by the configured probe
/// with fixed-step RK4 until the demodulated amplitudes settle.
///
/// The probe `μ_in` becomes the tone `A₊e^{−iωt} + A₋e^{iωt}` with
/// `A± = (q[±ω] + i p[±ω])/2`. At `ω = 0` the two sidebands coincide, so the
/// probe must have `q[ω] = q[−ω]` and `p[ω] = p[−ω]`.
pub fn ode_mean(config: &SensorConfig, opts: &OdeOptions) -> Result<OdeMean> {
    let margin = ensure_stable(config, MIN_MARGIN)?;
    let n = config.n_modes();
    let w = config.omega;
    let mu = &config.mu_in;
    if w == 0.0 && mu.chunks(4).any(|c| c[0] != c[1] || c[2] != c[3]) {
        return Err(Error::InvalidInput("at ω = 0 the probe must be symmetric in ±ω".into()));
    }
    let amp = |k: usize| -> (Complex64, Complex64) {
        let c = &mu[4 * k..4 * k + 4];
        (Complex64::new(c[0], c[2]) / 2.0, Complex64::new(c[1], c[3]) / 2.0)
    };
    let tones: Vec<(Complex64, Complex64)> = (0..n).map(amp).collect();
    let sqrt_c: Vec<f64> = config.modes.iter().map(|m| m.gammac.sqrt()).collect();

    let dt_max = opts.dt.unwrap_or(0.01 / max_rate(config));
    // Each window covers whole periods and at least one decay time.
    let (dt, window_steps) = if w == 0.0 {
        (dt_max, ((1.0 / margin) / dt_max).ceil() as usize)
    } else {
        let period = 2.0 * std::f64::consts::PI / w.abs();
        let per = (period / dt_max).ceil() as usize;
        let periods = ((1.0 / margin) / period).ceil().max(1.0) as usize;
        (period / per as f64, per * periods)
    };
    let max_duration = opts.max_duration.unwrap_or(400.0 / margin);

    let force = |t: f64, a: &[Complex64], out: &mut [Complex64]| {
        drift(config, a, out);
        let (em, ep) = (Complex64::from_polar(1.0, -w * t), Complex64::from_polar(1.0, w * t));
        for j in 0..n {
            let (ap, am) = tones[j];
            out[j] += sqrt_c[j] * if w == 0.0 { ap } else { ap * em + am * ep };
        }
    };

    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (a.clone(), a.clone(), a.clone(), a.clone(), a.clone());
    let mut step: u64 = 0;
    let mut previous: Option<Vec<f64>> = None;
    loop {
        let mut plus = vec![Complex64::new(0.0, 0.0); n];
        let mut minus = vec![Complex64::new(0.0, 0.0); n];
        for _ in 0..window_steps {
            let t = step as f64 * dt;
            let (rp, rm) = (Complex64::from_polar(1.0, w * t), Complex64::from_polar(1.0, -w * t));
            for j in 0..n {
                plus[j] += a[j] * rp;
                minus[j] += a[j] * rm;
            }
            force(t, &a, &mut k1);
            for j in 0..n {
                tmp[j] = a[j] + k1[j] * (dt / 2.0);
            }
            force(t + dt / 2.0, &tmp, &mut k2);
            for j in 0..n {
                tmp[j] = a[j] + k2[j] * (dt / 2.0);
            }
            force(t + dt / 2.0, &tmp, &mut k3);
            for j in 0..n {
                tmp[j] = a[j] + k3[j] * dt;
            }
            force(t + dt, &tmp, &mut k4);
            for j in 0..n {
                a[j] += (k1[j] + k2[j] * 2.0 + k3[j] * 2.0 + k4[j]) * (dt / 6.0);
            }
            step += 1;
        }
        let inv = 1.0 / window_steps as f64;
        let mut x = vec![0.0; 4 * n];
        for j in 0..n {
            let (cp, cm) = if w == 0.0 { (plus[j] * inv, plus[j] * inv) } else { (plus[j] * inv, minus[j] * inv) };
            x[4 * j] = 2.0 * cp.re;
            x[4 * j + 1] = 2.0 * cm.re;
            x[4 * j + 2] = 2.0 * cp.im;
            x[4 * j + 3] = 2.0 * cm.im;
        }
        let duration = step as f64 * dt;
        if let Some(prev) = &previous {
            let diff = x.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let size = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if diff <= opts.tol * size || size == 0.0 && diff == 0.0 {
                let mu_out = (0..4 * n).map(|i| mu[i] - sqrt_c[i / 4] * x[i]).collect();
                return Ok(OdeMean { mu_out, intracavity: x, duration, dt });
            }
        }
        if duration > max_duration {
            return Err(Error::NotConverged { duration });
        }
        previous = Some(x);
    }
}

/// Output transfer matrices of the three baths computed in the
/// annihilation-operator basis and mapped to quadratures.
#[derive(Clone, Debug)]
pub struct SpectralTransfers {
    /// Intracavity response to the waveguide, intrinsic and gain inputs.
    pub intracavity: [Mat<f64>; 3],
    /// Output response to the same three inputs.
    pub output: [Mat<f64>; 3],
    /// Largest imaginary part discarded when mapping to quadratures.
    pub imag_residue: f64,
}

/// Quadrature map from `(a[ω], a†[ω], a[−ω], a†[−ω])` (each `N` long).
fn quadrature_map(n: usize) -> DMatrix<Complex64> {
    let i = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    let mut q = DMatrix::zeros(4 * n, 4 * n);
    for j in 0..n {
        let (ap, cp, am, cm) = (j, n + j, 2 * n + j, 3 * n + j);
        q[(4 * j, ap)] = one;
        q[(4 * j, cm)] = one;
        q[(4 * j + 1, am)] = one;
        q[(4 * j + 1, cp)] = one;
        q[(4 * j + 2, ap)] = -i;
        q[(4 * j + 2, cm)] = i;
        q[(4 * j + 3, am)] = -i;
        q[(4 * j + 3, cp)] = i;
    }
    q
}

pub fn spectral_transfers(config: &SensorConfig, omega: f64) -> Result<SpectralTransfers> {
    ensure_stable(config, MIN_MARGIN)?;
    let n = config.n_modes();
    let i = Complex64::i();
    // Drift on (a, a†).
    let mut drift = DMatrix::<Complex64>::zeros(2 * n, 2 * n);
    for (j, m) in config.modes.iter().enumerate() {
        let d = m.delta + config.theta;
        drift[(j, j)] = -i * d - m.gamma_net() / 2.0;
        drift[(n + j, n + j)] = i * d - m.gamma_net() / 2.0;
        drift[(j, n + j)] = m.eps;
        drift[(n + j, j)] = m.eps.conj();
    }
    for j in 0..n.saturating_sub(1) {
        for (a, b) in [(j, j + 1), (j + 1, j)] {
            drift[(a, b)] = -i * config.g;
            drift[(n + a, n + b)] = i * config.g;
        }
    }
    let diag_pair = |rate: &dyn Fn(usize) -> f64| {
        DMatrix::<Complex64>::from_fn(2 * n, 2 * n, |r, c| if r == c { Complex64::new(rate(r % n).sqrt(), 0.0) } else { 0.0.into() })
    };
    let b_wg = diag_pair(&|j| config.modes[j].gammac);
    let b_int = diag_pair(&|j| config.modes[j].gamma0);
    let b_gain = DMatrix::<Complex64>::from_fn(2 * n, 2 * n, |r, c| {
        if (r + n) % (2 * n) == c {
            Complex64::new(GAIN_SIGN * config.modes[r % n].kappa.sqrt(), 0.0)
        } else {
            0.0.into()
        }
    });
    let susceptibility = |nu: f64| -> Result<DMatrix<Complex64>> {
        let a = DMatrix::<Complex64>::identity(2 * n, 2 * n) * (-i * nu) - &drift;
        a.try_inverse().ok_or(Error::SingularResolvent { cond: f64::INFINITY })
    };
    let (chi_p, chi_m) = (susceptibility(omega)?, susceptibility(-omega)?);
    let q = quadrature_map(n);
    let q_inv = q.clone().try_inverse().expect("quadrature map is invertible");
    let k_ex: Vec<f64> = config.modes.iter().flat_map(|m| std::iter::repeat_n(m.gammac.sqrt(), 4)).collect();

    let mut residue: f64 = 0.0;
    let mut to_real = |m: &DMatrix<Complex64>| -> Mat<f64> {
        residue = residue.max(m.iter().map(|z| z.im.abs()).fold(0.0, f64::max));
        Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)].re)
    };
    let mut intra = Vec::with_capacity(3);
    for b in [&b_wg, &b_int, &b_gain] {
        let mut blk = DMatrix::<Complex64>::zeros(4 * n, 4 * n);
        blk.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&(&chi_p * b));
        blk.view_mut((2 * n, 2 * n), (2 * n, 2 * n)).copy_from(&(&chi_m * b));
        intra.push(to_real(&(&q * blk * &q_inv)));
    }
    let dim = 4 * n;
    let out_wg = &Mat::identity(dim) - &intra[0].scale_rows(&k_ex);
    let out_int = -&intra[1].scale_rows(&k_ex);
    let out_gain = -&intra[2].scale_rows(&k_ex);
    let [h0, h1, h2]: [Mat<f64>; 3] = intra.try_into().expect("three baths");
    Ok(SpectralTransfers { intracavity: [h0, h1, h2], output: [out_wg, out_int, out_gain], imag_residue: residue })
}

/// Output covariance with vacuum inputs, `Σ_c T_c T_cᵀ`, from
/// [`spectral_transfers`].
pub fn spectral_covariance(config: &SensorConfig, omega: f64) -> Result<Mat<f64>> {
    let t = spectral_transfers(config, omega)?;
    let mut v = Mat::zeros(config.dim(), config.dim());
    for o in &t.output {
        v = &v + &o.matmul(&o.transpose());
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug)]
pub struct McOptions {
    pub trajectories: usize,
    pub dt: f64,
    pub seed: u64,
    /// Demodulation window; defaults to `50/margin`.
    pub window: Option<f64>,
    /// Discarded start-up time; defaults to `10/margin`.
    pub transient: Option<f64>,
    pub bootstrap: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        Self { trajectories: 2000, dt: 5e-3, seed: 0, window: None, transient: None, bootstrap: 200 }
    }
}

#[derive(Clone, Debug)]
pub struct McCovariance {
    pub v: Mat<f64>,
    /// Bootstrap standard error of each entry.
    pub std_err: Mat<f64>,
    pub trajectories: usize,
    pub window: f64,
}

/// Euler–Maruyama simulation of the noisy Langevin equations with vacuum
/// inputs on every open channel; each trajectory's output is demodulated at
/// `±omega` over a rectangular window.
pub fn monte_carlo_covariance(config: &SensorConfig, omega: f64, opts: &McOptions) -> Result<McCovariance> {
    let margin = ensure_stable(config, MIN_MARGIN)?;
    if opts.trajectories < 100 {
        return Err(Error::InvalidInput(format!("need at least 100 trajectories, got {}", opts.trajectories)));
    }
    let limit = 0.05 / max_rate(config);
    if !(opts.dt > 0.0 && opts.dt <= limit) {
        return Err(Error::StepTooLarge { dt: opts.dt, limit });
    }
    let window = opts.window.unwrap_or(50.0 / margin);
    let transient = opts.transient.unwrap_or(10.0 / margin);
    if omega.abs() * window < 10.0 * std::f64::consts::PI {
        return Err(Error::InvalidInput(format!(
            "sideband frequency {omega} cannot be resolved in a window of {window}"
        )));
    }
    let samples: Vec<Vec<f64>> = (0..opts.trajectories)
        .into_par_iter()
        .map(|k| trajectory(config, omega, opts.dt, window, transient, opts.seed, k as u64))
        .collect();
    let v = sample_covariance(&samples, None);

    let dim = config.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(u64::MAX);
    let mut sum = Mat::<f64>::zeros(dim, dim);
    let mut sum_sq = Mat::<f64>::zeros(dim, dim);
    for _ in 0..opts.bootstrap {
        let idx: Vec<usize> = (0..samples.len()).map(|_| rng.random_range(0..samples.len())).collect();
        let b = sample_covariance(&samples, Some(&idx));
        sum = &sum + &b;
        sum_sq = &sum_sq + &b.map(|x| x * x);
    }
    let nb = opts.bootstrap.max(1) as f64;
    let std_err = Mat::from_fn(dim, dim, |i, j| {
        let m = sum[(i, j)] / nb;
        (sum_sq[(i, j)] / nb - m * m).max(0.0).sqrt() * (nb / (nb - 1.0).max(1.0)).sqrt()
    });
    Ok(McCovariance { v, std_err, trajectories: opts.trajectories, window })
}

fn sample_covariance(samples: &[Vec<f64>], idx: Option<&[usize]>) -> Mat<f64> {
    let pick = |k: usize| &samples[idx.map_or(k, |i| i[k])];
    let n = idx.map_or(samples.len(), |i| i.len());
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for k in 0..n {
        for (m, x) in mean.iter_mut().zip(pick(k)) {
            *m += x / n as f64;
        }
    }
    let mut c = Mat::zeros(dim, dim);
    for k in 0..n {
        let x = pick(k);
        for i in 0..dim {
            for j in 0..dim {
                c[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    c.scale(1.0 / (n as f64 - 1.0))
}

fn trajectory(config: &SensorConfig, omega: f64, dt: f64, window: f64, transient: f64, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = config.n_modes();
    let rates: Vec<[f64; 3]> = config.modes.iter().map(|m| [m.gammac.sqrt(), m.gamma0.sqrt(), m.kappa.sqrt()]).collect();
    let noise = |rng: &mut ChaCha8Rng| {
        let s = (dt.sqrt()) / 2.0;
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        Complex64::new(x * s, y * s)
    };
    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let mut da = a.clone();
    let mut next = a.clone();
    let mut plus = vec![Complex64::new(0.0, 0.0); n];
    let mut minus = plus.clone();
    let warm = (transient / dt).ceil() as usize;
    let steps = (window / dt).ceil() as usize;
    let mut wg = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..warm + steps {
        drift(config, &a, &mut da);
        for j in 0..n {
            let [c, i0, g] = rates[j];
            wg[j] = noise(&mut rng);
            let dint = noise(&mut rng);
            let dgain = noise(&mut rng);
            next[j] = a[j] + da[j] * dt + wg[j] * c + dint * i0 + dgain.conj() * (GAIN_SIGN * g);
        }
        if k >= warm {
            let t = (k - warm) as f64 * dt + dt / 2.0;
            let (rp, rm) = (Complex64::from_polar(1.0, omega * t), Complex64::from_polar(1.0, -omega * t));
            for j in 0..n {
                let out = wg[j] - (a[j] + next[j]) * (rates[j][0] * dt / 2.0);
                plus[j] += out * rp;
                minus[j] += out * rm;
            }
        }
        std::mem::swap(&mut a, &mut next);
    }
    let norm = 1.0 / (steps as f64 * dt).sqrt();
    let mut x = vec![0.0; 4 * n];
    for j in 0..n {
        let (p, m) = (plus[j] * norm, minus[j] * norm);
        x[4 * j] = 2.0 * p.re;
        x[4 * j + 1] = 2.0 * m.re;
        x[4 * j + 2] = 2.0 * p.im;
        x[4 * j + 3] = 2.0 * m.im;
    }
    x
}

/// Outcome of one oracle comparison.
#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub note: Option<String>,
}

/// Runs all three oracles against the frequency-domain pipeline.
/// Covariance checks use the configured `ω`, or `0.5` when it is zero
/// (the stochastic estimator cannot separate the sidebands at `ω = 0`).
pub fn validate(config: &SensorConfig, mc: &McOptions) -> Vec<OracleCheck> {
    let mut out = Vec::new();
    let check = |name, res: Result<f64>, tolerance: f64| match res {
        Ok(error) => OracleCheck { name, error, tolerance, passed: error <= tolerance, note: None },
        Err(e) => OracleCheck { name, error: f64::NAN, tolerance, passed: false, note: Some(e.to_string()) },
    };

    out.push(check(
        "mean (ODE)",
        (|| {
            let ode = ode_mean(config, &OdeOptions::default())?;
            let core = propagate(config, &GreenSet::<crate::linalg::Ext>::build(config)?)?.to_f64();
            let scale = config.mu_in.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            Ok(ode.mu_out.iter().zip(&core.mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / scale)
        })(),
        1e-8,
    ));

    let w = if config.omega != 0.0 { config.omega } else { 0.5 };
    let at_w = config.clone().with_omega(w);
    let core_v = || -> Result<Mat<f64>> {
        Ok(propagate(&at_w, &GreenSet::<crate::linalg::Ext>::build(&at_w)?)?.v.to_f64())
    };
    out.push(check(
        "covariance (spectral)",
        (|| {
            let (s, c) = (spectral_covariance(&at_w, w)?, core_v()?);
            Ok((&s - &c).norm_fro() / c.norm_fro())
        })(),
        1e-6,
    ));
    out.push(check(
        "covariance (Monte Carlo)",
        (|| {
            let (m, c) = (monte_carlo_covariance(&at_w, w, mc)?, core_v()?);
            Ok((&m.v - &c).max_abs() / c.norm_fro())
        })(),
        0.05,
    ));
    out
}
