mod common;

use common::*;
use epsqueeze::ep::{SolveOptions, DEFAULT_TOL};
use epsqueeze::model::annihilation_drift_block;
use epsqueeze::{
    classify_degeneracy, degeneracy_diagnostic, ep_po_conditions, lasing_ep_reference, solve_ep, Complex64, Error,
    FreeParam, ModeParams, Scenario, ScenarioName, SensorConfig, Verdict,
};
use nalgebra::DMatrix;

fn fig3a() -> SensorConfig {
    Scenario::preset(ScenarioName::Fig3a).config
}

/// Uncoupled identical squeezed modes with `γ = 2ε`: both conditions hold
/// but the degeneracy is trivial.
fn diabolic(eps: f64) -> SensorConfig {
    let m = ModeParams::passive(2.0 * eps - 1.0, 1.0).with_eps(Complex64::new(eps, 0.0));
    SensorConfig::new(vec![m, m], 0.0)
}

#[test]
fn caption_parameters_satisfy_conditions() {
    let (a, b) = ep_po_conditions(&fig3a()).unwrap();
    assert!(a.abs() < 1e-12 && b.abs() < 1e-12, "{a} {b}");
}

#[test]
fn conditions_hold_at_trivial_points() {
    let (a, b) = ep_po_conditions(&diabolic(1.25)).unwrap();
    assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
    let zero = ModeParams::passive(0.0, 0.0);
    assert_eq!(ep_po_conditions(&SensorConfig::new(vec![zero, zero], 0.0)).unwrap(), (0.0, 0.0));
}

#[test]
fn conditions_need_two_modes() {
    let one = SensorConfig::single(ModeParams::passive(1.0, 1.0));
    assert_eq!(ep_po_conditions(&one), Err(Error::WrongArity { expected: 2, found: 1 }));
}

#[test]
fn caption_point_is_an_ep_on_threshold() {
    let r = classify_degeneracy(&fig3a(), DEFAULT_TOL).unwrap();
    assert_eq!(r.verdict, Verdict::EpPo);
    assert!((r.det_slope - 8.0).abs() <= 0.3, "{}", r.det_slope);
    assert!(r.clusters.iter().any(|c| c.algebraic == 2 && c.geometric == 1));
}

#[test]
fn eigenvalues_form_jordan_pairs() {
    let r = classify_degeneracy(&fig3a(), DEFAULT_TOL).unwrap();
    let b = r.jordan_b.unwrap();
    let total: usize = r.clusters.iter().map(|c| c.algebraic).sum();
    assert_eq!(total, 8);
    // a four-fold cluster at zero (the two aθ² blocks) and defective pairs at ±b
    let zero = r.clusters.iter().find(|c| c.value.norm() < 1e-6).unwrap();
    assert_eq!(zero.algebraic, 4);
    for sign in [1.0, -1.0] {
        let c = r.clusters.iter().find(|c| (c.value - b * sign).norm() < 1e-6).unwrap();
        assert_eq!((c.algebraic, c.geometric), (2, 1));
    }
    assert!(r.jordan_a.unwrap().norm() > 0.0);
}

#[test]
fn conditions_are_not_sufficient() {
    let cfg = diabolic(1.25);
    let r = classify_degeneracy(&cfg, DEFAULT_TOL).unwrap();
    assert!(r.cond1_residual.abs() < DEFAULT_TOL && r.cond2_residual.abs() < DEFAULT_TOL);
    assert_eq!(r.verdict, Verdict::Diabolic);
    assert!(r.clusters.iter().filter(|c| c.algebraic > 1).all(|c| c.geometric == c.algebraic));
}

#[test]
fn generic_configs_are_not_degenerate() {
    let mut rng = rng(5);
    for _ in 0..20 {
        let mut cfg = random_stable(&mut rng);
        if cfg.n_modes() == 1 {
            let m = cfg.modes[0];
            cfg = SensorConfig::new(vec![m, m.with_delta(m.delta + 0.37)], 0.21);
        }
        assert_eq!(classify_degeneracy(&cfg, DEFAULT_TOL).unwrap().verdict, Verdict::NotDegenerate);
    }
}

#[test]
fn lasing_reference_block() {
    let a = annihilation_drift_block(&lasing_ep_reference(2.0));
    let i = Complex64::i();
    let expected = DMatrix::from_row_slice(2, 2, &[Complex64::new(1.0, 0.0), -i, -i, Complex64::new(-1.0, 0.0)]);
    assert!((&a - &expected).norm() < 1e-15);
    // nilpotent and nonzero: a single eigenvector for the double zero
    assert!((&a * &a).norm() < 1e-15);
    assert!(a.norm() > 1.0);
    for z in a.eigenvalues().unwrap().iter() {
        assert!(z.norm() < 1e-7);
    }
}

#[test]
fn lasing_reference_determinant_is_quadratic() {
    let cfg = lasing_ep_reference(2.0);
    let det = |t: f64| annihilation_drift_block(&cfg.clone().with_theta(t)).determinant().norm();
    let slope = (det(1e-1) / det(1e-2)).log10();
    assert!((slope - 2.0).abs() < 0.1, "{slope}");
    assert_eq!(classify_degeneracy(&cfg, DEFAULT_TOL).unwrap().verdict, Verdict::ThresholdOnly);
}

#[test]
fn zero_rate_reference_is_diabolic() {
    let cfg = lasing_ep_reference(0.0);
    assert!(annihilation_drift_block(&cfg).iter().all(|z| z.norm() == 0.0));
    assert_eq!(classify_degeneracy(&cfg, DEFAULT_TOL).unwrap().verdict, Verdict::Diabolic);
}

#[test]
fn solver_recovers_caption_point() {
    let free = [FreeParam::Eps1Abs, FreeParam::Eps2Abs];
    let s = solve_ep(&fig3a(), free, [1.8, 1.8], &SolveOptions::default()).unwrap();
    assert!((s.config.modes[0].eps - Complex64::new(0.0, 2.0)).norm() < 1e-8);
    assert!((s.config.modes[1].eps - Complex64::new(0.0, -2.0)).norm() < 1e-8);
    assert_eq!(s.report.verdict, Verdict::EpPo);
    assert!(s.report.cond1_residual.abs() < 1e-10 && s.report.cond2_residual.abs() < 1e-10);
}

#[test]
fn solver_is_stable_under_tighter_tolerance() {
    let free = [FreeParam::Eps1Abs, FreeParam::Eps2Abs];
    let a = solve_ep(&fig3a(), free, [1.8, 1.8], &SolveOptions::default()).unwrap();
    let tight = SolveOptions { residual_tol: 1e-11, ..Default::default() };
    let b = solve_ep(&fig3a(), free, [1.8, 1.8], &tight).unwrap();
    for p in free {
        assert!((p.get(&a.config) - p.get(&b.config)).abs() < 1e-8);
    }
}

#[test]
fn solver_leaves_solutions_alone() {
    let s = solve_ep(&fig3a(), [FreeParam::Eps1Abs, FreeParam::Eps2Abs], [2.0, 2.0], &SolveOptions::default()).unwrap();
    assert_eq!(s.iterations, 0);
    assert_eq!(s.config, fig3a());
}

#[test]
fn solver_moves_other_parameters() {
    let mut template = fig3a();
    template.modes[0].gamma0 = 2.6;
    template.g = 0.15;
    let s = solve_ep(&template, [FreeParam::Gamma01, FreeParam::G], [2.6, 0.15], &SolveOptions::default()).unwrap();
    assert!((s.config.modes[0].gamma0 - 2.8).abs() < 1e-8);
    assert!((s.config.g - 0.1).abs() < 1e-8);
    assert_eq!(s.report.verdict, Verdict::EpPo);

    template = fig3a();
    template.modes[0].gamma0 = 2.5;
    template.modes[1].gamma0 = 3.5;
    let s = solve_ep(&template, [FreeParam::Gamma01, FreeParam::Gamma02], [2.5, 3.5], &SolveOptions::default()).unwrap();
    assert!((s.config.modes[0].gamma0 - 2.8).abs() < 1e-8);
    assert!((s.config.modes[1].gamma0 - 3.2).abs() < 1e-8);
}

#[test]
fn infeasible_template_does_not_converge() {
    let m = ModeParams::passive(0.1, 0.0).with_eps(Complex64::new(0.0, 1.0));
    let template = SensorConfig::new(vec![m, m.with_eps(Complex64::new(0.0, -1.0))], 1.0);
    let r = solve_ep(&template, [FreeParam::Eps1Abs, FreeParam::Eps2Abs], [1.0, 1.0], &SolveOptions::default());
    assert!(matches!(r, Err(Error::NoConvergence { .. })), "{r:?}");
}

#[test]
fn solver_rejects_repeated_unknowns() {
    let r = solve_ep(&fig3a(), [FreeParam::G, FreeParam::G], [0.1, 0.1], &SolveOptions::default());
    assert!(matches!(r, Err(Error::InvalidInput(_))));
}

#[test]
fn solver_reports_trivial_roots() {
    let r = solve_ep(&diabolic(1.25), [FreeParam::Eps1Abs, FreeParam::Eps2Abs], [1.25, 1.25], &SolveOptions::default());
    assert!(matches!(r, Err(Error::ConvergedToDiabolic { verdict: Verdict::Diabolic, .. })), "{r:?}");
}

#[test]
fn diagnostic_generalises_to_longer_chains() {
    let d = degeneracy_diagnostic(&fig3a(), DEFAULT_TOL).unwrap();
    assert_eq!(d.order, 2);
    assert_eq!(d.expected_det_slope, 8.0);
    let m = ModeParams::passive(0.5, 1.0);
    let chain = SensorConfig::new(vec![m, m, m], 0.3);
    let d = degeneracy_diagnostic(&chain, DEFAULT_TOL).unwrap();
    assert_eq!(d.order, 1);
    assert!(d.det_slope.abs() < 0.1);
}

#[test]
fn free_parameter_tokens() {
    for p in [FreeParam::Eps1Abs, FreeParam::Eps2Abs, FreeParam::G, FreeParam::Gamma01, FreeParam::Gamma02] {
        assert_eq!(p.as_str().parse::<FreeParam>().unwrap(), p);
    }
}
