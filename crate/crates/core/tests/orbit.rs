mod common;

use common::{family, member, CLOSURE};
use proptest::prelude::*;
use rollwave::model::{hopf_analysis, Equilibrium};
use rollwave::orbit::{
    check_h2_rank, derivative_condition, derivative_condition_samples, integrate_profile, read_profile, solve_periodic,
    write_profile, Constraint, PeriodicProfile, SolveOptions,
};
use rollwave::ModelParams;

#[test]
fn every_member_closes_and_satisfies_the_closure() {
    let fam = family();
    assert!(fam.profiles.len() > 10);
    for p in &fam.profiles {
        assert!(p.periodicity_defect < 1e-9, "X = {}: defect {:.2e}", p.period(), p.periodicity_defect);
        assert!(p.ode_residual() < 1e-8, "X = {}: residual {:.2e}", p.period(), p.ode_residual());
        // One shot over the whole period amplifies rounding along the
        // unstable direction, so this is looser than the segment defect.
        let end = integrate_profile(&p.spec, &p.params, &[p.period()]).unwrap()[0];
        let miss = (end[0] - p.spec.b[0]).abs().max((end[1] - p.spec.b[1]).abs());
        assert!(miss < 1e-7, "X = {}: one-shot miss {miss:.2e}", p.period());
        assert!((p.spec.q - CLOSURE.q(&p.params, p.spec.c)).abs() < 1e-10);
        for (t, u) in p.tau.iter().zip(&p.u) {
            assert!((u + p.spec.c * t - p.spec.q).abs() < 1e-10);
        }
        assert!(p.min_tau() > 0.0);
    }
}

#[test]
fn family_starts_at_the_hopf_period_and_reaches_the_target() {
    let fam = family();
    let x_h = fam.hopf.period.unwrap();
    let first = &fam.profiles[0];
    assert!((first.period() - x_h).abs() < 0.01 * x_h, "first X = {}, X_H = {x_h}", first.period());
    assert!((first.spec.c - fam.hopf.cs).abs() < 1e-3);
    let last = fam.profiles.last().unwrap();
    assert!(last.period() >= 30.0 - 1e-9);
    // Period grows monotonically along the branch.
    for w in fam.profiles.windows(2) {
        assert!(w[1].period() > w[0].period());
    }
}

#[test]
fn hopf_period_matches_the_linear_prediction() {
    let p = ModelParams::roll_wave_default();
    let h = hopf_analysis(&p, 1.0).unwrap();
    let k = h.k_h.unwrap();
    assert!((h.period.unwrap() - 2.0 * std::f64::consts::PI / k).abs() < 1e-12);
    assert!((h.cs - p.sound_speed(1.0)).abs() < 1e-12);
}

#[test]
fn period_translation_leaves_the_profile_unchanged() {
    let p = member(6.2);
    let x = p.period();
    for s in [0.3, 1.7, 4.0] {
        let a = p.state_at(s).unwrap();
        let b = p.state_at(s + x).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }
    let (tau, _) = p.shifted(x);
    let err = tau.iter().zip(&p.tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err:.2e}");
}

#[test]
fn mid_family_orbit_has_full_rank_h2() {
    let d = check_h2_rank(member(6.2)).unwrap();
    assert!(d.full_rank);
    assert_eq!(d.null_dimension, 3);
}

#[test]
fn derivative_condition_on_family_and_counterexamples() {
    for p in &family().profiles {
        assert!(derivative_condition(p).holds, "fails at X = {}", p.period());
    }
    let params = ModelParams::roll_wave_default();
    let eq = Equilibrium::balanced(&params, 1.0, 0.5);
    let flat = PeriodicProfile::constant(&eq, &params, 5.0, 64);
    let d = derivative_condition(&flat);
    assert!((d.margin - 1.0 / params.froude).abs() < 1e-15);
    let steep: Vec<f64> = member(6.2).u_x().iter().map(|v| v * 1e3).collect();
    assert!(!derivative_condition_samples(&params, &steep).holds);
}

#[test]
fn fixed_period_solve_reproduces_a_family_member() {
    let target = member(6.2);
    let guess = family().nearest(6.0).unwrap();
    let opts = SolveOptions { closure: Some(CLOSURE), ..SolveOptions::default() };
    let p = solve_periodic(&guess.spec, &guess.params, Constraint::FixPeriod(6.2), &opts).unwrap();
    assert!((p.spec.c - target.spec.c).abs() < 1e-8);
    assert!((p.amplitude() - target.amplitude()).abs() < 1e-7);
}

#[test]
fn profile_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.txt");
    let p = member(4.5);
    write_profile(&path, p).unwrap();
    let back = read_profile(&path).unwrap();
    assert_eq!(back.spec, p.spec);
    let err = back.tau.iter().zip(&p.tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-12, "{err:.2e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // Any point on a closed orbit is a valid base point: integrating one
    // period from it returns to the same state.
    #[test]
    fn orbit_is_periodic_from_any_base_point(frac in 0.0f64..1.0) {
        let p = member(6.2);
        let b = p.state_at(frac * p.period()).unwrap();
        let spec = rollwave::orbit::OrbitSpec { b, ..p.spec };
        let end = integrate_profile(&spec, &p.params, &[p.period()]).unwrap()[0];
        prop_assert!((end[0] - b[0]).abs() < 1e-8 && (end[1] - b[1]).abs() < 1e-8);
    }
}
