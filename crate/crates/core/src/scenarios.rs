//! Named sensor presets, perturbation sweeps, log–log slope fits and the CSV
//! record format.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::ep::lasing_ep_reference;
use crate::error::{Error, Result};
use crate::fisher::{cfi_from, evaluate, qfi_from, DetectionSpec, FisherOptions, Flag, PhiChoice};
use crate::model::{ModeParams, SensorConfig};

/// Smallest perturbation swept by default; below it double-double precision
/// no longer covers the output covariance's conditioning.
pub const THETA_FLOOR: f64 = 1e-3;

/// Column order of the sweep CSV.
pub const CSV_HEADER: [&str; 10] =
    ["theta", "qfi_mu", "qfi_v", "qfi_total", "crb", "cfi_het", "cfi_hom", "phi_opt", "cond_number", "flags"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    Fig2Passive,
    Fig2Lasing,
    Fig2Po,
    Fig2EpLasing,
    Fig2EpPo,
    Fig3a,
    Fig3b,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 7] = [
        ScenarioName::Fig2Passive,
        ScenarioName::Fig2Lasing,
        ScenarioName::Fig2Po,
        ScenarioName::Fig2EpLasing,
        ScenarioName::Fig2EpPo,
        ScenarioName::Fig3a,
        ScenarioName::Fig3b,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Fig2Passive => "fig2_passive",
            ScenarioName::Fig2Lasing => "fig2_lasing",
            ScenarioName::Fig2Po => "fig2_po",
            ScenarioName::Fig2EpLasing => "fig2_ep_lasing",
            ScenarioName::Fig2EpPo => "fig2_ep_po",
            ScenarioName::Fig3a => "fig3a",
            ScenarioName::Fig3b => "fig3b",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario `{s}`")))
    }
}

/// Log-spaced perturbation grid; zero points gives an empty grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl ThetaGrid {
    pub fn log(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let ordered = if points > 1 { hi > lo } else { hi >= lo };
        if !(lo > 0.0 && ordered && hi.is_finite()) {
            return Err(Error::InvalidInput(format!("bad grid log:{lo}:{hi}:{points}")));
        }
        Ok(Self { lo, hi, points })
    }

    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        (0..self.points)
            .map(|k| match k {
                0 => self.lo,
                k if k + 1 == self.points => self.hi,
                k => (a + (b - a) * k as f64 / (self.points - 1) as f64).exp(),
            })
            .collect()
    }
}

impl FromStr for ThetaGrid {
    type Err = Error;
    /// Parses `log:LO:HI:PTS`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("expected log:LO:HI:PTS, got `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 || parts[0] != "log" {
            return Err(bad());
        }
        let lo = parts[1].parse().map_err(|_| bad())?;
        let hi = parts[2].parse().map_err(|_| bad())?;
        let pts = parts[3].parse().map_err(|_| bad())?;
        ThetaGrid::log(lo, hi, pts)
    }
}

/// A preset configuration with its default sweep and fit window.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: ScenarioName,
    pub config: SensorConfig,
    pub grid: ThetaGrid,
    pub fit_window: (f64, f64),
    /// Log–log slope of the bound expected over `fit_window`.
    pub expected_slope: Option<f64>,
}

/// Two squeezed modes with opposite squeezing phases, coupled by `g = 0.1`.
fn ep_po_pair(gamma01: f64, gamma02: f64) -> SensorConfig {
    let m1 = ModeParams::passive(gamma01, 1.0).with_eps(Complex64::new(0.0, 2.0));
    let m2 = ModeParams::passive(gamma02, 1.0).with_eps(Complex64::new(0.0, -2.0));
    SensorConfig::new(vec![m1, m2], 0.1)
}

impl Scenario {
    pub fn preset(name: ScenarioName) -> Self {
        let single = |m: ModeParams| SensorConfig::single(m);
        let base = ModeParams::passive(0.5, 1.0);
        let (config, window, slope) = match name {
            ScenarioName::Fig2Passive => (single(base), (1e-3, 1e-2), Some(0.0)),
            ScenarioName::Fig2Lasing => (single(base.with_kappa(1.5)), (1e-2, 1e-1), Some(1.0)),
            ScenarioName::Fig2Po => (single(base.with_eps(Complex64::new(0.75, 0.0))), (1e-2, 1e-1), Some(2.0)),
            ScenarioName::Fig2EpLasing => (lasing_ep_reference(2.0), (1e-2, 1e-1), Some(2.0)),
            ScenarioName::Fig2EpPo | ScenarioName::Fig3a => (ep_po_pair(2.8, 3.2), (1e-2, 1e-1), Some(4.0)),
            ScenarioName::Fig3b => (ep_po_pair(2.801, 3.201), (1e-3, 3e-3), None),
        };
        let grid = ThetaGrid { lo: THETA_FLOOR, hi: 1e-1, points: 49 };
        Scenario { name, config, grid, fit_window: window, expected_slope: slope }
    }

    /// Replaces the grid; grids reaching below [`THETA_FLOOR`] are refused.
    pub fn with_grid(mut self, grid: ThetaGrid) -> Result<Self> {
        check_floor(&grid)?;
        self.grid = grid;
        Ok(self)
    }
}

fn check_floor(grid: &ThetaGrid) -> Result<()> {
    if grid.lo < THETA_FLOOR * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!(
            "grid starts at {:e}, below the precision floor {THETA_FLOOR:e}",
            grid.lo
        )));
    }
    Ok(())
}

/// One row of a sweep. Columns that were not computed are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    pub theta: f64,
    pub qfi_mu: f64,
    pub qfi_v: f64,
    pub qfi_total: f64,
    pub crb: f64,
    pub cfi_het: f64,
    pub cfi_hom: f64,
    /// Homodyne angle of the first readout channel.
    pub phi_opt: f64,
    pub cond_number: f64,
    pub flags: Vec<Flag>,
}

impl SweepRecord {
    fn empty(theta: f64) -> Self {
        let nan = f64::NAN;
        Self {
            theta,
            qfi_mu: nan,
            qfi_v: nan,
            qfi_total: nan,
            crb: nan,
            cfi_het: nan,
            cfi_hom: nan,
            phi_opt: nan,
            cond_number: nan,
            flags: Vec::new(),
        }
    }

    pub fn has_error(&self) -> bool {
        self.flags.iter().any(|f| f.is_error())
    }
}

/// Which quantities a sweep computes.
#[derive(Clone, Copy, Debug)]
pub struct SweepOptions {
    pub qfi: bool,
    pub heterodyne: bool,
    pub homodyne: Option<PhiChoice>,
    pub fisher: FisherOptions,
    /// Permit grids below [`THETA_FLOOR`].
    pub allow_below_floor: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            qfi: true,
            heterodyne: true,
            homodyne: Some(PhiChoice::Auto),
            fisher: FisherOptions::default(),
            allow_below_floor: false,
        }
    }
}

/// Full sweep (QFI, heterodyne and optimal homodyne) of a preset.
pub fn run_sweep(scenario: &Scenario) -> Result<Vec<SweepRecord>> {
    sweep_config(&scenario.config, &scenario.grid, &SweepOptions::default())
}

/// Evaluates every grid point in parallel; rows come back in grid order and
/// failures are recorded as flags rather than aborting the sweep.
pub fn sweep_config(config: &SensorConfig, grid: &ThetaGrid, opts: &SweepOptions) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    if !opts.allow_below_floor {
        check_floor(grid)?;
    }
    Ok(grid.values().into_par_iter().map(|t| sweep_point(config, t, opts)).collect())
}

fn sweep_point(config: &SensorConfig, theta: f64, opts: &SweepOptions) -> SweepRecord {
    let mut rec = SweepRecord::empty(theta);
    let cfg = config.clone().with_theta(theta);
    let eval = match evaluate(&cfg, &opts.fisher) {
        Ok(e) => e,
        Err(e) => {
            if let Error::SingularResolvent { cond } = e {
                rec.cond_number = cond;
            }
            rec.flags.push(Flag::from_error(&e));
            return rec;
        }
    };
    rec.cond_number = eval.cond_number;
    if opts.qfi {
        match qfi_from(&eval, &opts.fisher) {
            Ok(r) => {
                rec.qfi_mu = r.i_mu;
                rec.qfi_v = r.i_v;
                rec.qfi_total = r.i_total;
                rec.crb = r.crb;
                rec.flags.extend(r.flags);
            }
            Err(e) => rec.flags.push(Flag::from_error(&e)),
        }
    }
    if opts.heterodyne {
        match cfi_from(&cfg, &eval, DetectionSpec::Heterodyne, &opts.fisher) {
            Ok(r) => {
                rec.cfi_het = r.i_total;
                rec.flags.extend(r.flags);
            }
            Err(e) => rec.flags.push(Flag::from_error(&e)),
        }
    }
    if let Some(choice) = opts.homodyne {
        match cfi_from(&cfg, &eval, DetectionSpec::Homodyne(choice), &opts.fisher) {
            Ok(r) => {
                rec.cfi_hom = r.i_total;
                rec.phi_opt = r.phi.first().copied().unwrap_or(f64::NAN);
                rec.flags.extend(r.flags);
            }
            Err(e) => rec.flags.push(Flag::from_error(&e)),
        }
    }
    rec.flags.sort();
    rec.flags.dedup();
    rec
}

/// Quantity a slope can be fitted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    QfiMu,
    QfiV,
    QfiTotal,
    Crb,
    CfiHet,
    CfiHom,
    /// `1/√cfi_het`
    CrbHet,
    /// `1/√cfi_hom`
    CrbHom,
    CondNumber,
}

impl Field {
    pub fn value(self, r: &SweepRecord) -> f64 {
        match self {
            Field::QfiMu => r.qfi_mu,
            Field::QfiV => r.qfi_v,
            Field::QfiTotal => r.qfi_total,
            Field::Crb => r.crb,
            Field::CfiHet => r.cfi_het,
            Field::CfiHom => r.cfi_hom,
            Field::CrbHet => 1.0 / r.cfi_het.sqrt(),
            Field::CrbHom => 1.0 / r.cfi_hom.sqrt(),
            Field::CondNumber => r.cond_number,
        }
    }
}

impl FromStr for Field {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "qfi_mu" => Field::QfiMu,
            "qfi_v" => Field::QfiV,
            "qfi_total" => Field::QfiTotal,
            "crb" => Field::Crb,
            "cfi_het" => Field::CfiHet,
            "cfi_hom" => Field::CfiHom,
            "crb_het" => Field::CrbHet,
            "crb_hom" => Field::CrbHom,
            "cond_number" => Field::CondNumber,
            other => return Err(Error::InvalidInput(format!("unknown field `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Minimum number of in-window points for a slope fit.
pub const MIN_FIT_POINTS: usize = 5;

/// Least-squares slope of `log field` against `log θ` over rows whose `θ`
/// lies in `window` and whose value is finite and positive.
pub fn fit_slope(records: &[SweepRecord], field: Field, window: (f64, f64)) -> Result<SlopeFit> {
    let (lo, hi) = (window.0 * (1.0 - 1e-9), window.1 * (1.0 + 1e-9));
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.theta >= lo && r.theta <= hi)
        .map(|r| (r.theta, field.value(r)))
        .filter(|(t, v)| *t > 0.0 && v.is_finite() && *v > 0.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .unzip();
    if xs.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData { needed: MIN_FIT_POINTS, found: xs.len() });
    }
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    Ok(SlopeFit { slope, intercept, r_squared, points: xs.len() })
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns `(slope, intercept, R²)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

fn fmt_num(x: f64) -> String {
    // `{:e}` prints the shortest string that parses back to the same value.
    format!("{x:e}")
}

pub fn write_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in records {
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        w.write_record([
            fmt_num(r.theta),
            fmt_num(r.qfi_mu),
            fmt_num(r.qfi_v),
            fmt_num(r.qfi_total),
            fmt_num(r.crb),
            fmt_num(r.cfi_het),
            fmt_num(r.cfi_hom),
            fmt_num(r.phi_opt),
            fmt_num(r.cond_number),
            flags.join(";"),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let io = |e: csv::Error| Error::Csv(e.to_string());
    let header = rd.headers().map_err(io)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Csv(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(io)?;
        let num = |k: usize| -> Result<f64> {
            row[k].parse().map_err(|_| Error::Csv(format!("row {}: bad number `{}`", i + 1, &row[k])))
        };
        let flags = row[9].split(';').filter(|s| !s.is_empty()).map(str::parse).collect::<Result<Vec<Flag>>>()?;
        out.push(SweepRecord {
            theta: num(0)?,
            qfi_mu: num(1)?,
            qfi_v: num(2)?,
            qfi_total: num(3)?,
            crb: num(4)?,
            cfi_het: num(5)?,
            cfi_hom: num(6)?,
            phi_opt: num(7)?,
            cond_number: num(8)?,
            flags,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parse_and_endpoints() {
        let g: ThetaGrid = "log:1e-2:1e-1:25".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 25);
        assert_eq!(v[0], 1e-2);
        assert_eq!(v[24], 1e-1);
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        assert!("lin:1:2:3".parse::<ThetaGrid>().is_err());
        assert!("log:1e-1:1e-2:5".parse::<ThetaGrid>().is_err());
    }

    #[test]
    fn scenario_names_roundtrip() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
    }

    #[test]
    fn floor_is_enforced() {
        let s = Scenario::preset(ScenarioName::Fig3a);
        assert!(s.with_grid(ThetaGrid::log(1e-4, 1e-2, 5).unwrap()).is_err());
    }

    #[test]
    fn exact_power_law_slope() {
        let recs: Vec<SweepRecord> = ThetaGrid::log(1e-2, 1e-1, 7)
            .unwrap()
            .values()
            .into_iter()
            .map(|t| SweepRecord { crb: 3.0 * t.powi(2), ..SweepRecord::empty(t) })
            .collect();
        let f = fit_slope(&recs, Field::Crb, (1e-2, 1e-1)).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let recs: Vec<SweepRecord> = (0..4).map(|k| SweepRecord { crb: 1.0, ..SweepRecord::empty(0.02 + 0.01 * k as f64) }).collect();
        assert_eq!(
            fit_slope(&recs, Field::Crb, (1e-2, 1e-1)),
            Err(Error::InsufficientData { needed: 5, found: 4 })
        );
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let r = SweepRecord {
            theta: 0.1 / 3.0,
            qfi_mu: 1.234_567_890_123_456_7e17,
            qfi_v: f64::MIN_POSITIVE,
            qfi_total: 2.0 / 3.0,
            crb: f64::NAN,
            cfi_het: 1e-300,
            cfi_hom: 5.0,
            phi_opt: std::f64::consts::FRAC_PI_4,
            cond_number: f64::INFINITY,
            flags: vec![Flag::Ridge, Flag::NearPure],
        };
        let mut buf = Vec::new();
        write_csv(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta,qfi_mu,qfi_v,qfi_total,crb,cfi_het,cfi_hom,phi_opt,cond_number,flags\n"));
        assert!(text.contains("ridge;near_pure"));
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        let b = &back[0];
        assert!(b.crb.is_nan());
        assert_eq!(SweepRecord { crb: 0.0, ..b.clone() }, SweepRecord { crb: 0.0, ..r });
    }
}
