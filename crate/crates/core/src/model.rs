//! Sensor parameters, the quadrature-basis dynamical matrix, Green's functions
//! and input–output propagation of Gaussian states.
//!
//! Each mode contributes four real quadratures ordered
//! `(q[ω], q[−ω], p[ω], p[−ω])`, with `q = a + a†` so vacuum has unit covariance.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{Ext, Mat, Real};

/// Probe amplitude used when none is given.
pub const DEFAULT_PROBE_AMPLITUDE: f64 = 1e3;

/// Resolvents with a larger 1-norm condition number are rejected.
pub const DEFAULT_COND_CAP: f64 = 1e14;

/// One bosonic mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeParams {
    /// Detuning from the probe frame.
    pub delta: f64,
    /// Intrinsic loss rate.
    pub gamma0: f64,
    /// Coupling rate to the readout waveguide.
    pub gammac: f64,
    /// Gain rate.
    pub kappa: f64,
    /// Two-photon (squeezing) drive.
    pub eps: Complex64,
}

impl ModeParams {
    /// A passive, resonant, undriven mode.
    pub fn passive(gamma0: f64, gammac: f64) -> Self {
        Self { delta: 0.0, gamma0, gammac, kappa: 0.0, eps: Complex64::new(0.0, 0.0) }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_eps(mut self, eps: Complex64) -> Self {
        self.eps = eps;
        self
    }

    /// Net loss `γ0 + γc − κ`; negative means net gain.
    pub fn gamma_net(&self) -> f64 {
        self.gamma0 + self.gammac - self.kappa
    }
}

/// A chain of modes with uniform nearest-neighbour coupling, a perturbation
/// and a coherent probe.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    pub modes: Vec<ModeParams>,
    /// Nearest-neighbour coupling; must be zero for a single mode.
    pub g: f64,
    /// Perturbation added to every detuning.
    pub theta: f64,
    /// Sideband frequency.
    pub omega: f64,
    /// Mean input quadratures, `4N` entries.
    pub mu_in: Vec<f64>,
}

impl SensorConfig {
    /// Unperturbed configuration at `ω = 0`, probed on the first mode with the
    /// default amplitude.
    pub fn new(modes: Vec<ModeParams>, g: f64) -> Self {
        let mu_in = tone_probe(modes.len(), DEFAULT_PROBE_AMPLITUDE, &[0]);
        Self { modes, g, theta: 0.0, omega: 0.0, mu_in }
    }

    pub fn single(mode: ModeParams) -> Self {
        Self::new(vec![mode], 0.0)
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    /// Coherent tone of amplitude `alpha` on the given (0-based) modes.
    pub fn with_probe(mut self, alpha: f64, driven: &[usize]) -> Self {
        self.mu_in = tone_probe(self.modes.len(), alpha, driven);
        self
    }

    pub fn with_mu_in(mut self, mu_in: Vec<f64>) -> Self {
        self.mu_in = mu_in;
        self
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Quadrature dimension `4N`.
    pub fn dim(&self) -> usize {
        4 * self.modes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        for (j, m) in self.modes.iter().enumerate() {
            let vals = [m.delta, m.gamma0, m.gammac, m.kappa, m.eps.re, m.eps.im];
            if vals.iter().any(|v| !v.is_finite()) {
                return bad(format!("mode {}: non-finite parameter", j + 1));
            }
            if m.gamma0 < 0.0 || m.gammac < 0.0 || m.kappa < 0.0 {
                return bad(format!("mode {}: rates must be non-negative", j + 1));
            }
        }
        if !self.g.is_finite() || !self.theta.is_finite() || !self.omega.is_finite() {
            return bad("non-finite coupling, perturbation or frequency".into());
        }
        if self.modes.len() == 1 && self.g != 0.0 {
            return bad("coupling g must be zero for a single mode".into());
        }
        if self.mu_in.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: self.mu_in.len() });
        }
        if self.mu_in.iter().any(|v| !v.is_finite()) {
            return bad("non-finite probe".into());
        }
        Ok(())
    }

    /// Detects a tone probe: returns `(alpha, driven)` when `mu_in` has the
    /// form produced by [`tone_probe`].
    pub fn tone(&self) -> Option<(f64, Vec<usize>)> {
        let mut alpha = None;
        let mut driven = Vec::new();
        for (j, c) in self.mu_in.chunks(4).enumerate() {
            if c.iter().all(|&x| x == 0.0) {
                continue;
            }
            if c[0] != c[1] || c[2] != 0.0 || c[3] != 0.0 {
                return None;
            }
            match alpha {
                None => alpha = Some(c[0]),
                Some(a) if a == c[0] => {}
                Some(_) => return None,
            }
            driven.push(j);
        }
        match alpha {
            Some(a) => Some((a, driven)),
            None => Some((0.0, Vec::new())),
        }
    }
}

/// Mean input vector `α (1, 1, 0, 0)` on each driven (0-based) mode.
pub fn tone_probe(n_modes: usize, alpha: f64, driven: &[usize]) -> Vec<f64> {
    let mut mu = vec![0.0; 4 * n_modes];
    for &j in driven {
        if j < n_modes {
            mu[4 * j] = alpha;
            mu[4 * j + 1] = alpha;
        }
    }
    mu
}

/// Fixed 4×4 forms of the quadrature basis.
pub mod forms {
    use crate::linalg::{Mat, Real};

    /// Intracavity commutator form.
    pub fn omega<T: Real>() -> Mat<T> {
        Mat::from_rows(&[&[0., 0., 1., 0.], &[0., 0., 0., -1.], &[-1., 0., 0., 0.], &[0., 1., 0., 0.]])
    }

    /// Form for conjugated (gain) inputs.
    pub fn omega_gain<T: Real>() -> Mat<T> {
        Mat::from_rows(&[&[0., 0., 0., 1.], &[0., 0., -1., 0.], &[0., 1., 0., 0.], &[-1., 0., 0., 0.]])
    }

    /// Symplectic form pairing `q[±ω]` with `p[±ω]`.
    pub fn omega_sympl<T: Real>() -> Mat<T> {
        Mat::from_rows(&[&[0., 0., 1., 0.], &[0., 0., 0., 1.], &[-1., 0., 0., 0.], &[0., -1., 0., 0.]])
    }

    /// `∂M/∂θ` for one mode.
    pub fn detuning_sign<T: Real>() -> Mat<T> {
        Mat::from_diag(&[T::one(), -T::one(), T::one(), -T::one()])
    }

    /// Maps `(q[ω], q[−ω], p[ω], p[−ω])` to the two time-domain quadratures.
    pub fn sideband_to_time<T: Real>() -> Mat<T> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Mat::from_rows(&[&[h, h, 0., 0.], &[0., 0., h, h]])
    }

    /// Rotation by the homodyne angle.
    pub fn rotation<T: Real>(phi: f64) -> Mat<T> {
        let (s, c) = phi.sin_cos();
        Mat::from_rows(&[&[c, -s], &[s, c]])
    }

    /// Projector onto the first time-domain quadrature.
    pub fn projector<T: Real>() -> Mat<T> {
        Mat::from_rows(&[&[1., 0.], &[0., 0.]])
    }

    /// Homodyne measurement row `first row of N(φ) T`.
    pub fn homodyne_row(phi: f64) -> [f64; 4] {
        let (s, c) = phi.sin_cos();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        [c * h, c * h, -s * h, -s * h]
    }
}

/// Quadrature-basis dynamical matrix `M` (`4N × 4N`).
pub fn build_m<T: Real>(config: &SensorConfig) -> Result<Mat<T>> {
    config.validate()?;
    let n = config.n_modes();
    let mut m = Mat::zeros(4 * n, 4 * n);
    for (j, mode) in config.modes.iter().enumerate() {
        let d = mode.delta + config.theta;
        let h = mode.gamma_net() / 2.0;
        let (er, ei) = (mode.eps.re, mode.eps.im);
        let block = Mat::from_rows(&[
            &[d, -ei, h, er],
            &[ei, -d, -er, -h],
            &[-h, er, d, ei],
            &[-er, h, -ei, -d],
        ]);
        m.set_block(4 * j, 4 * j, &block);
    }
    let g = config.g;
    let coupling = Mat::from_rows(&[&[g, 0., 0., 0.], &[0., -g, 0., 0.], &[0., 0., g, 0.], &[0., 0., 0., -g]]);
    for j in 0..n.saturating_sub(1) {
        m.set_block(4 * j, 4 * (j + 1), &coupling);
        m.set_block(4 * (j + 1), 4 * j, &coupling);
    }
    Ok(m)
}

/// Square roots of one channel's rates, repeated over each mode's quadratures.
fn channel_diag<T: Real>(config: &SensorConfig, rate: impl Fn(&ModeParams) -> f64) -> Vec<T> {
    config.modes.iter().flat_map(|m| std::iter::repeat_n(T::from_f64(rate(m).sqrt()), 4)).collect()
}

/// Green's functions and scattering matrices at one `(θ, ω)`.
#[derive(Clone, Debug)]
pub struct GreenSet<T> {
    pub m: Mat<T>,
    /// `(ωI − M)⁻¹`
    pub resolvent: Mat<T>,
    /// `G = −(ωI − M)⁻¹ (I ⊗ Ω)`
    pub g_main: Mat<T>,
    /// `G′ = −(ωI − M)⁻¹ (I ⊗ Ω′)`, seen by the gain bath.
    pub g_gain: Mat<T>,
    /// Input-to-output scattering `S = I − K_ex G K_ex`.
    pub s: Mat<T>,
    /// Intrinsic-loss transfer `L = −K_ex G K_i`.
    pub l: Mat<T>,
    /// Gain-bath transfer `K = −K_ex G′ K_g`.
    pub k: Mat<T>,
    /// Diagonals of `K_ex`, `K_i`, `K_g`.
    pub k_ex: Vec<T>,
    pub k_int: Vec<T>,
    pub k_gain: Vec<T>,
    /// 1-norm condition number of `ωI − M`.
    pub cond: f64,
}

impl<T: Real> GreenSet<T> {
    pub fn build(config: &SensorConfig) -> Result<Self> {
        Self::build_capped(config, DEFAULT_COND_CAP)
    }

    pub fn build_capped(config: &SensorConfig, cond_cap: f64) -> Result<Self> {
        let m = build_m::<T>(config)?;
        let n = config.n_modes();
        let dim = 4 * n;
        let w = T::from_f64(config.omega);
        let a = &Mat::identity(dim).scale(w) - &m;
        let resolvent = match a.inverse() {
            Ok(r) => r,
            Err(_) => return Err(Error::SingularResolvent { cond: f64::INFINITY }),
        };
        let cond = a.norm_one() * resolvent.norm_one();
        if !(cond <= cond_cap) {
            return Err(Error::SingularResolvent { cond });
        }
        let eye_n = Mat::<T>::identity(n);
        let g_main = -&resolvent.matmul(&eye_n.kron(&forms::omega()));
        let g_gain = -&resolvent.matmul(&eye_n.kron(&forms::omega_gain()));
        let k_ex = channel_diag(config, |m| m.gammac);
        let k_int = channel_diag(config, |m| m.gamma0);
        let k_gain = channel_diag(config, |m| m.kappa);
        let s = &Mat::identity(dim) - &g_main.scale_rows(&k_ex).scale_cols(&k_ex);
        let l = -&g_main.scale_rows(&k_ex).scale_cols(&k_int);
        let k = -&g_gain.scale_rows(&k_ex).scale_cols(&k_gain);
        if !(s.all_finite() && l.all_finite() && k.all_finite()) {
            return Err(Error::NonFinite("Green's functions"));
        }
        Ok(Self { m, resolvent, g_main, g_gain, s, l, k, k_ex, k_int, k_gain, cond })
    }
}

/// [`GreenSet`] in double-double precision.
pub fn build_green_set(config: &SensorConfig) -> Result<GreenSet<Ext>> {
    GreenSet::build(config)
}

/// Covariances of the three input baths.
#[derive(Clone, Debug)]
pub struct NoiseInputs<T> {
    pub waveguide: Mat<T>,
    pub intrinsic: Mat<T>,
    pub gain: Mat<T>,
}

impl<T: Real> NoiseInputs<T> {
    pub fn vacuum(n_modes: usize) -> Self {
        let i = Mat::identity(4 * n_modes);
        Self { waveguide: i.clone(), intrinsic: i.clone(), gain: i }
    }
}

/// Mean and covariance of a Gaussian state in the quadrature basis.
#[derive(Clone, Debug)]
pub struct GaussianState<T> {
    pub mu: Vec<T>,
    pub v: Mat<T>,
}

impl<T: Real> GaussianState<T> {
    pub fn to_f64(&self) -> GaussianState<f64> {
        GaussianState { mu: self.mu.iter().map(|x| x.to_f64()).collect(), v: self.v.to_f64() }
    }
}

/// Output state for arbitrary bath covariances.
pub fn propagate_with<T: Real>(
    config: &SensorConfig,
    green: &GreenSet<T>,
    noise: &NoiseInputs<T>,
) -> Result<GaussianState<T>> {
    let dim = config.dim();
    for m in [&noise.waveguide, &noise.intrinsic, &noise.gain] {
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: m.nrows() });
        }
    }
    if green.s.nrows() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: green.s.nrows() });
    }
    let mu_in: Vec<T> = config.mu_in.iter().map(|&x| T::from_f64(x)).collect();
    let mu = green.s.matvec(&mu_in);
    let sandwich = |a: &Mat<T>, b: &Mat<T>| a.matmul(b).matmul(&a.transpose());
    let v = &(&sandwich(&green.s, &noise.waveguide) + &sandwich(&green.l, &noise.intrinsic))
        + &sandwich(&green.k, &noise.gain);
    if !v.all_finite() || mu.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("output state"));
    }
    Ok(GaussianState { mu, v })
}

/// Output state with all baths in vacuum.
pub fn propagate<T: Real>(config: &SensorConfig, green: &GreenSet<T>) -> Result<GaussianState<T>> {
    propagate_with(config, green, &NoiseInputs::vacuum(config.n_modes()))
}

/// Closed-form single-mode poles `−iγ/2 ± √((δ+θ)² − |ε|²)`.
pub fn eigvals_annihilation(mode: &ModeParams, theta: f64) -> (Complex64, Complex64) {
    let d = mode.delta + theta;
    let root = Complex64::new(d * d - mode.eps.norm_sqr(), 0.0).sqrt();
    let base = Complex64::new(0.0, -mode.gamma_net() / 2.0);
    (base + root, base - root)
}

/// Detuning at which a single mode sits on a parametric-oscillation
/// threshold: `√(|ε|² − γ²/4)`.
pub fn po_threshold_detuning(eps_abs: f64, gamma_net: f64) -> Result<f64> {
    let r = eps_abs * eps_abs - gamma_net * gamma_net / 4.0;
    if !(r >= 0.0) {
        return Err(Error::BelowThreshold);
    }
    Ok(r.sqrt())
}

/// Real time-domain drift on `(q₁, p₁, …, q_N, p_N)` with `a = (q + ip)/2`.
pub fn time_drift(config: &SensorConfig) -> DMatrix<f64> {
    let n = config.n_modes();
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for (j, m) in config.modes.iter().enumerate() {
        let dp = m.delta + config.theta;
        let h = m.gamma_net() / 2.0;
        let (er, ei) = (m.eps.re, m.eps.im);
        d[(2 * j, 2 * j)] = er - h;
        d[(2 * j, 2 * j + 1)] = dp + ei;
        d[(2 * j + 1, 2 * j)] = ei - dp;
        d[(2 * j + 1, 2 * j + 1)] = -h - er;
    }
    for j in 0..n.saturating_sub(1) {
        for (a, b) in [(j, j + 1), (j + 1, j)] {
            d[(2 * a, 2 * b + 1)] = config.g;
            d[(2 * a + 1, 2 * b)] = -config.g;
        }
    }
    d
}

/// Poles of the coupled system in the `−iγ/2` convention (eigenvalues of the
/// time drift multiplied by `i`).
pub fn annihilation_poles(config: &SensorConfig) -> Vec<Complex64> {
    let mut p: Vec<Complex64> =
        time_drift(config).complex_eigenvalues().iter().map(|&z| z * Complex64::i()).collect();
    p.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    p
}

/// `−max Re` of the drift eigenvalues; positive means stable.
pub fn stability_margin(config: &SensorConfig) -> f64 {
    -time_drift(config).complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Drift of the annihilation operators alone (`ε` terms dropped): diagonal
/// `−i(δ+θ) − γ/2`, couplings `−ig`.
pub fn annihilation_drift_block(config: &SensorConfig) -> DMatrix<Complex64> {
    let n = config.n_modes();
    let mut a = DMatrix::zeros(n, n);
    for (j, m) in config.modes.iter().enumerate() {
        a[(j, j)] = Complex64::new(-m.gamma_net() / 2.0, -(m.delta + config.theta));
    }
    for j in 0..n.saturating_sub(1) {
        a[(j, j + 1)] = Complex64::new(0.0, -config.g);
        a[(j + 1, j)] = Complex64::new(0.0, -config.g);
    }
    a
}
