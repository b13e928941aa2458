//! Locating and classifying the degeneracy of the dynamical matrix: exceptional
//! points on a parametric-oscillation threshold versus diabolic points.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{Ext, Real};
use crate::model::{build_m, ModeParams, SensorConfig};

/// Default relative tolerance for residuals and eigenvalue clustering.
pub const DEFAULT_TOL: f64 = 1e-7;

/// `|det M(θ)|` of a second-order EP on threshold scales like `θ⁸`.
pub const EP_PO_DET_SLOPE: f64 = 8.0;
const DET_SLOPE_TOL: f64 = 0.3;

/// Window over which the determinant slope is fitted.
const DET_WINDOW: (f64, f64) = (1e-2, 1e-1);
const DET_POINTS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// Second-order EP sitting on the oscillation threshold.
    EpPo,
    /// Degenerate but diagonalisable.
    Diabolic,
    /// A zero eigenvalue without an EP of the right kind.
    ThresholdOnly,
    NotDegenerate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::EpPo => "ep_po",
            Verdict::Diabolic => "diabolic",
            Verdict::ThresholdOnly => "threshold_only",
            Verdict::NotDegenerate => "not_degenerate",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A group of numerically coincident eigenvalues.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenCluster {
    /// Mean of the members.
    pub value: Complex64,
    pub algebraic: usize,
    /// Dimension of the (numerical) null space of `M − value·I`.
    pub geometric: usize,
}

impl EigenCluster {
    pub fn is_defective(&self) -> bool {
        self.geometric < self.algebraic
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpReport {
    pub cond1_residual: f64,
    pub cond2_residual: f64,
    /// Log–log slope of `|det M(θ)|` for small `θ`.
    pub det_slope: f64,
    /// Clusters of the eigenvalues of `M` at `θ = 0`.
    pub clusters: Vec<EigenCluster>,
    pub verdict: Verdict,
    /// Near-zero eigenvalues grow like `a θ²`.
    pub jordan_a: Option<Complex64>,
    /// Location `±b` of the outer EP pair.
    pub jordan_b: Option<Complex64>,
}

/// Residuals of the two conditions for a two-mode EP on threshold (resonant
/// modes): both vanish exactly at such a point.
pub fn ep_po_conditions(config: &SensorConfig) -> Result<(f64, f64)> {
    let [m1, m2] = two_modes(config)?;
    let (g1, g2) = (m1.gamma_net(), m2.gamma_net());
    let (e1, e2) = (m1.eps.norm_sqr(), m2.eps.norm_sqr());
    let g2c = config.g * config.g;
    let cond1 = e1 + e2 - ((g1 * g1 + g2 * g2) / 4.0 - 2.0 * g2c);
    let cross = m1.eps.re * m2.eps.re + m1.eps.im * m2.eps.im;
    let lead = g2c + g1 * g2 / 4.0;
    let cond2 = -lead * lead - (e1 * e2 - (g1 * g1 * e2 + g2 * g2 * e1) / 4.0 - 2.0 * g2c * cross);
    Ok((cond1, cond2))
}

fn two_modes(config: &SensorConfig) -> Result<[ModeParams; 2]> {
    match config.modes.as_slice() {
        [a, b] => Ok([*a, *b]),
        other => Err(Error::WrongArity { expected: 2, found: other.len() }),
    }
}

fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.norm().max(1.0)
}

/// Groups eigenvalues of `m` within `tol·‖m‖` of each other and measures the
/// geometric multiplicity of each group by counting singular values of
/// `m − λI` below `100·tol·‖m‖`.
pub fn eigen_clusters(m: &DMatrix<f64>, tol: f64) -> Vec<EigenCluster> {
    let ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    let scale = scale_of(m);
    let radius = tol * scale;
    let n = ev.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (ev[i] - ev[j]).norm() < radius {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut groups: Vec<(usize, Vec<Complex64>)> = Vec::new();
    for i in 0..n {
        let r = root(&mut parent, i);
        match groups.iter_mut().find(|(k, _)| *k == r) {
            Some((_, g)) => g.push(ev[i]),
            None => groups.push((r, vec![ev[i]])),
        }
    }
    let mc: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    let mut out: Vec<EigenCluster> = groups
        .into_iter()
        .map(|(_, g)| {
            let value = g.iter().sum::<Complex64>() / g.len() as f64;
            let shifted = &mc - DMatrix::<Complex64>::identity(n, n) * value;
            let sv = shifted.singular_values();
            let geometric = sv.iter().filter(|&&s| s < 100.0 * tol * scale).count().max(1);
            EigenCluster { value, algebraic: g.len(), geometric }
        })
        .collect();
    out.sort_by(|a, b| a.value.im.total_cmp(&b.value.im).then(a.value.re.total_cmp(&b.value.re)));
    out
}

/// Log–log slope of `|det M(θ)|` over `θ ∈ [lo, hi]`, evaluated in
/// double-double so tiny determinants keep their digits.
pub fn det_slope(config: &SensorConfig, lo: f64, hi: f64, points: usize) -> Result<f64> {
    let mut xs = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for k in 0..points {
        let t = lo * (hi / lo).powf(k as f64 / (points - 1) as f64);
        let m = build_m::<Ext>(&config.clone().with_theta(t))?;
        let d = m.det().to_f64().abs();
        if d > 0.0 && d.is_finite() {
            xs.push(t.ln());
            ys.push(d.ln());
        }
    }
    if xs.len() < 2 {
        // Determinant identically zero: singular for every θ.
        return Ok(f64::INFINITY);
    }
    Ok(crate::scenarios::least_squares(&xs, &ys).0)
}

/// Classifies the unperturbed (`θ = 0`) two-mode configuration.
pub fn classify_degeneracy(config: &SensorConfig, tol: f64) -> Result<EpReport> {
    let (cond1_residual, cond2_residual) = ep_po_conditions(config)?;
    let base = config.clone().with_theta(0.0);
    let m = build_m::<f64>(&base)?.to_nalgebra();
    let clusters = eigen_clusters(&m, tol);
    let det_slope = det_slope(&base, DET_WINDOW.0, DET_WINDOW.1, DET_POINTS)?;

    let radius = tol * scale_of(&m);
    let conditions = cond1_residual.abs() < tol && cond2_residual.abs() < tol;
    let ep_pair = clusters.iter().any(|c| c.algebraic == 2 && c.geometric == 1);
    let degenerate: Vec<_> = clusters.iter().filter(|c| c.algebraic > 1).collect();
    let has_zero = clusters.iter().any(|c| c.value.norm() < radius);

    let verdict = if conditions && ep_pair && (det_slope - EP_PO_DET_SLOPE).abs() <= DET_SLOPE_TOL {
        Verdict::EpPo
    } else if conditions && !degenerate.is_empty() && degenerate.iter().all(|c| !c.is_defective()) {
        Verdict::Diabolic
    } else if has_zero {
        Verdict::ThresholdOnly
    } else {
        Verdict::NotDegenerate
    };

    let (jordan_a, jordan_b) = if verdict == Verdict::EpPo { jordan_constants(&base, &clusters)? } else { (None, None) };
    Ok(EpReport { cond1_residual, cond2_residual, det_slope, clusters, verdict, jordan_a, jordan_b })
}

/// `b` from the outer EP pair at `θ = 0`; `a` from the near-zero eigenvalues
/// at small `θ`, which grow like `a θ²`.
fn jordan_constants(base: &SensorConfig, clusters: &[EigenCluster]) -> Result<(Option<Complex64>, Option<Complex64>)> {
    let b = clusters
        .iter()
        .filter(|c| c.algebraic == 2 && c.geometric == 1)
        .map(|c| c.value)
        .max_by(|x, y| (x.im, x.re).partial_cmp(&(y.im, y.re)).unwrap_or(std::cmp::Ordering::Equal));
    let Some(b) = b else { return Ok((None, None)) };
    let t = 1e-2;
    let ev = build_m::<f64>(&base.clone().with_theta(t))?.to_nalgebra().complex_eigenvalues();
    let a = ev
        .iter()
        .filter(|z| z.norm() < 0.1 * b.norm())
        .max_by(|x, y| (x.im, x.re).partial_cmp(&(y.im, y.re)).unwrap_or(std::cmp::Ordering::Equal))
        .map(|z| z / (t * t));
    Ok((a, Some(b)))
}

/// Degeneracy summary for any number of modes.
#[derive(Clone, Debug, PartialEq)]
pub struct DegeneracyDiagnostic {
    pub clusters: Vec<EigenCluster>,
    pub det_slope: f64,
    /// Largest Jordan-block size suggested by the clusters.
    pub order: usize,
    /// Determinant slope an EP of that order on threshold would give.
    pub expected_det_slope: f64,
}

pub fn degeneracy_diagnostic(config: &SensorConfig, tol: f64) -> Result<DegeneracyDiagnostic> {
    let base = config.clone().with_theta(0.0);
    let m = build_m::<f64>(&base)?.to_nalgebra();
    let clusters = eigen_clusters(&m, tol);
    let order = clusters.iter().map(|c| c.algebraic.div_ceil(c.geometric)).max().unwrap_or(1);
    let det_slope = det_slope(&base, DET_WINDOW.0, DET_WINDOW.1, DET_POINTS)?;
    Ok(DegeneracyDiagnostic { clusters, det_slope, order, expected_det_slope: 4.0 * order as f64 })
}

/// Parameters the EP solver may move. Squeezing phases are kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreeParam {
    Eps1Abs,
    Eps2Abs,
    G,
    Gamma01,
    Gamma02,
}

impl FreeParam {
    /// Current value in `c`.
    pub fn get(self, c: &SensorConfig) -> f64 {
        match self {
            FreeParam::Eps1Abs => c.modes[0].eps.norm(),
            FreeParam::Eps2Abs => c.modes[1].eps.norm(),
            FreeParam::G => c.g,
            FreeParam::Gamma01 => c.modes[0].gamma0,
            FreeParam::Gamma02 => c.modes[1].gamma0,
        }
    }

    fn set(self, c: &mut SensorConfig, x: f64) {
        // Rescale rather than rebuild from polar form, so an unchanged
        // magnitude leaves the value bit-identical.
        let set_abs = |e: &mut Complex64, r: f64| {
            let n = e.norm();
            *e = if n > 0.0 { *e * (r.abs() / n) } else { Complex64::new(r.abs(), 0.0) };
        };
        match self {
            FreeParam::Eps1Abs => set_abs(&mut c.modes[0].eps, x),
            FreeParam::Eps2Abs => set_abs(&mut c.modes[1].eps, x),
            FreeParam::G => c.g = x,
            FreeParam::Gamma01 => c.modes[0].gamma0 = x.max(0.0),
            FreeParam::Gamma02 => c.modes[1].gamma0 = x.max(0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FreeParam::Eps1Abs => "eps1_abs",
            FreeParam::Eps2Abs => "eps2_abs",
            FreeParam::G => "g",
            FreeParam::Gamma01 => "gamma01",
            FreeParam::Gamma02 => "gamma02",
        }
    }
}

impl FromStr for FreeParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "eps1_abs" => FreeParam::Eps1Abs,
            "eps2_abs" => FreeParam::Eps2Abs,
            "g" => FreeParam::G,
            "gamma01" => FreeParam::Gamma01,
            "gamma02" => FreeParam::Gamma02,
            other => return Err(Error::InvalidInput(format!("unknown free parameter `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub residual_tol: f64,
    pub max_iter: usize,
    pub classify_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-10, max_iter: 100, classify_tol: DEFAULT_TOL }
    }
}

#[derive(Clone, Debug)]
pub struct EpSolution {
    pub config: SensorConfig,
    pub report: EpReport,
    pub iterations: usize,
}

/// Damped Newton iteration on the two EP conditions over two free parameters.
pub fn solve_ep(
    template: &SensorConfig,
    free: [FreeParam; 2],
    guess: [f64; 2],
    opts: &SolveOptions,
) -> Result<EpSolution> {
    two_modes(template)?;
    if free[0] == free[1] {
        return Err(Error::InvalidInput("free parameters must differ".into()));
    }
    let at = |x: [f64; 2]| {
        let mut c = template.clone();
        free[0].set(&mut c, x[0]);
        free[1].set(&mut c, x[1]);
        c
    };
    let resid = |x: [f64; 2]| -> Result<[f64; 2]> {
        let (a, b) = ep_po_conditions(&at(x))?;
        Ok([a, b])
    };
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    // The second condition vanishes quadratically at an EP; its square root
    // restores a simple root and keeps Newton out of the spurious basins that
    // the raw residual has nearby.
    let scaled = |x: [f64; 2]| -> Result<[f64; 2]> {
        let [a, b] = resid(x)?;
        Ok([a, b.signum() * b.abs().sqrt()])
    };

    let mut x = guess;
    let mut iterations = 0;
    while norm(resid(x)?) >= opts.residual_tol {
        if iterations == opts.max_iter {
            return Err(Error::NoConvergence { iterations, residual: norm(resid(x)?) });
        }
        iterations += 1;
        // Near the root the square root has a kink; fall back to the raw
        // residual when the scaled step stalls.
        if !newton_step(&scaled, &mut x)? && !newton_step(&resid, &mut x)? {
            return Err(Error::NoConvergence { iterations, residual: norm(resid(x)?) });
        }
    }
    // Polish on the raw residual down to roundoff.
    if iterations > 0 {
        for _ in 0..60 {
            if norm(resid(x)?) == 0.0 || !newton_step(&resid, &mut x)? {
                break;
            }
        }
    }
    // Canonicalise magnitudes so the returned parameters are those used.
    let config = at(x);
    let report = classify_degeneracy(&config, opts.classify_tol)?;
    if report.verdict != Verdict::EpPo {
        return Err(Error::ConvergedToDiabolic { verdict: report.verdict, point: x });
    }
    Ok(EpSolution { config, report, iterations })
}

/// One damped Newton step with a central-difference Jacobian. Returns
/// `false` when no step along the Newton direction reduces the residual.
fn newton_step(f: &impl Fn([f64; 2]) -> Result<[f64; 2]>, x: &mut [f64; 2]) -> Result<bool> {
    let norm = |r: [f64; 2]| r[0].abs().max(r[1].abs());
    let r = f(*x)?;
    if !norm(r).is_finite() {
        return Ok(false);
    }
    let mut jac = [[0.0; 2]; 2];
    for k in 0..2 {
        let h = 1e-7 * x[k].abs().max(1.0);
        let (mut xp, mut xm) = (*x, *x);
        xp[k] += h;
        xm[k] -= h;
        let (rp, rm) = (f(xp)?, f(xm)?);
        for i in 0..2 {
            jac[i][k] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    if det == 0.0 || !det.is_finite() {
        return Ok(false);
    }
    let step = [-(jac[1][1] * r[0] - jac[0][1] * r[1]) / det, -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det];
    let mut lambda = 1.0;
    for _ in 0..40 {
        let trial = [x[0] + lambda * step[0], x[1] + lambda * step[1]];
        if norm(f(trial)?) < norm(r) {
            *x = trial;
            return Ok(true);
        }
        lambda *= 0.5;
    }
    Ok(false)
}

/// Two coupled modes at an EP on the lasing threshold: net gain `γ` on the
/// first, net loss `γ` on the second, coupling `γ/2`, no squeezing.
pub fn lasing_ep_reference(gamma: f64) -> SensorConfig {
    let gain = ModeParams::passive(gamma / 2.0, gamma / 2.0).with_kappa(2.0 * gamma);
    let loss = ModeParams::passive(gamma / 2.0, gamma / 2.0);
    SensorConfig::new(vec![gain, loss], gamma / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_tokens() {
        assert_eq!(Verdict::EpPo.to_string(), "ep_po");
        assert_eq!(Verdict::NotDegenerate.to_string(), "not_degenerate");
    }

    #[test]
    fn free_param_parse() {
        assert_eq!("eps2_abs".parse::<FreeParam>().unwrap(), FreeParam::Eps2Abs);
        assert!("delta".parse::<FreeParam>().is_err());
    }

    #[test]
    fn set_abs_keeps_phase() {
        let m = ModeParams::passive(1.0, 1.0).with_eps(Complex64::from_polar(2.0, 0.3));
        let mut c = SensorConfig::new(vec![m, m], 0.5);
        FreeParam::Eps1Abs.set(&mut c, 3.0);
        assert!((c.modes[0].eps.arg() - 0.3).abs() < 1e-15);
        assert!((c.modes[0].eps.norm() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn lasing_reference_rates() {
        let c = lasing_ep_reference(2.0);
        assert_eq!(c.modes[0].gamma_net(), -2.0);
        assert_eq!(c.modes[1].gamma_net(), 2.0);
        assert_eq!(c.g, 1.0);
    }

    #[test]
    fn isolated_eigenvalues_are_simple() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let c = eigen_clusters(&m, DEFAULT_TOL);
        assert_eq!(c.len(), 2);
        assert!(c.iter().all(|c| c.algebraic == 1 && c.geometric == 1));
    }

    #[test]
    fn jordan_block_is_defective() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c = eigen_clusters(&m, DEFAULT_TOL);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].algebraic, c[0].geometric), (2, 1));
    }
}
