use epsqueeze::scenarios::{read_csv, sweep_config, write_csv, SweepOptions, CSV_HEADER, THETA_FLOOR};
use epsqueeze::{fit_slope, run_sweep, Error, Field, Scenario, ScenarioName, SweepRecord, ThetaGrid};

fn csv_bytes(records: &[SweepRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(records, &mut out).unwrap();
    out
}

fn synthetic(power: f64) -> Vec<SweepRecord> {
    let grid = ThetaGrid::log(1e-2, 1e-1, 11).unwrap();
    let cfg = Scenario::preset(ScenarioName::Fig2Passive).config;
    let opts = SweepOptions { heterodyne: false, homodyne: None, ..Default::default() };
    let mut rows = sweep_config(&cfg, &grid, &opts).unwrap();
    for r in &mut rows {
        r.crb = r.theta.powf(power);
    }
    rows
}

#[test]
fn fig3a_sweep_is_finite() {
    let s = Scenario::preset(ScenarioName::Fig3a).with_grid(ThetaGrid::log(1e-2, 1e-1, 25).unwrap()).unwrap();
    let rows = run_sweep(&s).unwrap();
    assert_eq!(rows.len(), 25);
    for r in &rows {
        assert!(!r.has_error(), "{:?}", r.flags);
        for v in [r.qfi_mu, r.qfi_v, r.qfi_total, r.crb, r.cfi_het, r.cfi_hom, r.phi_opt, r.cond_number] {
            assert!(v.is_finite());
        }
        assert!((r.crb * r.qfi_total.sqrt() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn passive_bound_is_flat_at_small_theta() {
    let s = Scenario::preset(ScenarioName::Fig2Passive).with_grid(ThetaGrid::log(1e-3, 1e-2, 25).unwrap()).unwrap();
    let crb: Vec<f64> = run_sweep(&s).unwrap().iter().map(|r| r.crb).collect();
    let (lo, hi) = crb.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &c| (a.min(c), b.max(c)));
    assert!(hi / lo < 1.1, "{lo} {hi}");
}

#[test]
fn empty_grid_gives_no_rows() {
    let s = Scenario::preset(ScenarioName::Fig2Po).with_grid(ThetaGrid::log(1e-2, 1e-1, 0).unwrap()).unwrap();
    assert!(run_sweep(&s).unwrap().is_empty());
}

#[test]
fn grid_below_floor_is_refused() {
    let grid = ThetaGrid::log(1e-4, 1e-1, 10).unwrap();
    assert!(matches!(Scenario::preset(ScenarioName::Fig3a).with_grid(grid), Err(Error::InvalidInput(_))));
    let cfg = Scenario::preset(ScenarioName::Fig2Po).config;
    assert!(sweep_config(&cfg, &grid, &SweepOptions::default()).is_err());
    let allowed = SweepOptions { allow_below_floor: true, ..Default::default() };
    assert_eq!(sweep_config(&cfg, &grid, &allowed).unwrap().len(), 10);
    assert_eq!(Scenario::preset(ScenarioName::Fig3a).grid.lo, THETA_FLOOR);
}

#[test]
fn exact_power_law_slope() {
    let fit = fit_slope(&synthetic(4.0), Field::Crb, (1e-2, 1e-1)).unwrap();
    assert!((fit.slope - 4.0).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
    assert_eq!(fit.points, 11);
}

#[test]
fn too_few_points() {
    let e = fit_slope(&synthetic(1.0), Field::Crb, (1e-2, 1.5e-2)).unwrap_err();
    assert!(matches!(e, Error::InsufficientData { needed: 5, .. }));
}

#[test]
fn preset_slopes() {
    for name in [ScenarioName::Fig2Po, ScenarioName::Fig2EpPo, ScenarioName::Fig2Lasing, ScenarioName::Fig2EpLasing] {
        let s = Scenario::preset(name);
        let grid = ThetaGrid::log(s.fit_window.0, s.fit_window.1, 25).unwrap();
        let rows = sweep_config(&s.config, &grid, &SweepOptions { heterodyne: false, homodyne: None, ..Default::default() }).unwrap();
        let fit = fit_slope(&rows, Field::Crb, s.fit_window).unwrap();
        let expected = s.expected_slope.unwrap();
        assert!((fit.slope - expected).abs() < 0.05 * expected.max(1.0), "{name}: {}", fit.slope);
    }
}

#[test]
fn slopes_do_not_depend_on_probe_amplitude() {
    for name in [ScenarioName::Fig2Po, ScenarioName::Fig3a, ScenarioName::Fig2Lasing] {
        let s = Scenario::preset(name);
        let grid = ThetaGrid::log(s.fit_window.0, s.fit_window.1, 25).unwrap();
        let opts = SweepOptions { heterodyne: false, homodyne: None, ..Default::default() };
        let louder = s.config.clone().with_mu_in(s.config.mu_in.iter().map(|x| 2.0 * x).collect());
        let a = fit_slope(&sweep_config(&s.config, &grid, &opts).unwrap(), Field::Crb, s.fit_window).unwrap();
        let b = fit_slope(&sweep_config(&louder, &grid, &opts).unwrap(), Field::Crb, s.fit_window).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-6, "{name}: {} vs {}", a.slope, b.slope);
    }
}

#[test]
fn sweeps_are_bit_reproducible() {
    let s = Scenario::preset(ScenarioName::Fig3a);
    let a = csv_bytes(&run_sweep(&s).unwrap());
    let b = csv_bytes(&run_sweep(&s).unwrap());
    assert_eq!(a, b);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = csv_bytes(&single.install(|| run_sweep(&s).unwrap()));
    assert_eq!(a, c);
}

#[test]
fn csv_round_trip() {
    let s = Scenario::preset(ScenarioName::Fig2Lasing);
    let rows = run_sweep(&s).unwrap();
    let bytes = csv_bytes(&rows);
    let text = String::from_utf8(bytes.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let back = read_csv(bytes.as_slice()).unwrap();
    assert_eq!(csv_bytes(&back), bytes);
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.crb.to_bits(), b.crb.to_bits());
        assert_eq!(a.flags, b.flags);
    }
}

#[test]
fn csv_header_checked() {
    assert!(matches!(read_csv("theta,crb\n1,2\n".as_bytes()), Err(Error::Csv(_))));
}

#[test]
fn unused_columns_are_nan() {
    let s = Scenario::preset(ScenarioName::Fig2Po);
    let grid = ThetaGrid::log(1e-2, 1e-1, 3).unwrap();
    let rows = sweep_config(&s.config, &grid, &SweepOptions { heterodyne: false, homodyne: None, ..Default::default() }).unwrap();
    assert!(rows.iter().all(|r| r.cfi_het.is_nan() && r.cfi_hom.is_nan() && r.crb.is_finite()));
}

#[test]
fn singular_rows_are_flagged_not_fatal() {
    // an EP on threshold is singular at θ = 0 itself
    let s = Scenario::preset(ScenarioName::Fig3a);
    let grid = ThetaGrid::log(1e-9, 1e-1, 9).unwrap();
    let rows = sweep_config(&s.config, &grid, &SweepOptions { allow_below_floor: true, ..Default::default() }).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows[0].has_error());
    assert!(!rows[8].has_error());
}

#[test]
fn below_threshold_pair_saturates() {
    let crb = |name, t: f64| {
        let s = Scenario::preset(name);
        epsqueeze::qfi(&s.config.with_theta(t)).unwrap().crb
    };
    let b = crb(ScenarioName::Fig3b, 1e-3) / crb(ScenarioName::Fig3b, 3e-3);
    let a = crb(ScenarioName::Fig3a, 3e-3) / crb(ScenarioName::Fig3a, 1e-3);
    assert!((0.8..=1.25).contains(&b), "{b}");
    assert!(a >= 50.0, "{a}");
}

#[test]
fn every_name_parses() {
    for n in ScenarioName::ALL {
        assert_eq!(n.to_string().parse::<ScenarioName>().unwrap(), n);
        let _ = Scenario::preset(n);
    }
    assert!("fig4".parse::<ScenarioName>().is_err());
}
