//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs under `cargo test --test acceptance` (no libtest harness,
//! so the report is printed as it goes).

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use num_complex::Complex64;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rollwave::bloch::{
    bloch_eigenvalues, build_coefficients, compute_spectrum, critical_curves, xi_grid, SpectrumOptions, SpectrumReport,
    StabilityClass, Window,
};
use rollwave::evans::{halving_scales, leading_order_ratio, monodromy};
use rollwave::model::{constant_state_dispersion, hopf_analysis, neutral_branch, neutral_branch_derivatives, Equilibrium};
use rollwave::orbit::{
    continue_family, derivative_condition, family_hopf_point, hopf_start, solve_periodic, Closure, Constraint,
    ContinuationOptions, OrbitFamily, PeriodicProfile, SolveOptions,
};
use rollwave::simulate::{decays_after_peak, run_metastability, run_stability_probe, MetastabilityOptions, ProbeOptions, ProbeVerdict};
use rollwave::whitham::{verify_tangency, whitham_jacobians};
use rollwave::ModelParams;

type Check = Result<(bool, String), String>;

const CLOSURE: Closure = Closure::EndState { u_minus: 0.96 };

fn spectrum_options() -> SpectrumOptions {
    SpectrumOptions { convergence_stride: 10, ..SpectrumOptions::default() }
}

struct Shared {
    family: OrbitFamily,
    /// Orbits solved during the window search, also subject to criterion 10.
    extra: Vec<PeriodicProfile>,
    stable: Option<(PeriodicProfile, SpectrumReport)>,
}

impl Shared {
    fn member(&self, period: f64) -> PeriodicProfile {
        let p = self.family.nearest(period).expect("family is non-empty");
        assert!((p.period() - period).abs() < 1e-9, "period {period} was not requested");
        p.clone()
    }

    fn solve_at(&mut self, period: f64) -> rollwave::Result<PeriodicProfile> {
        let guess = self.family.nearest(period).expect("family is non-empty");
        let opts = SolveOptions { closure: Some(CLOSURE), ..SolveOptions::default() };
        let p = solve_periodic(&guess.spec, &guess.params, Constraint::FixPeriod(period), &opts)?;
        self.extra.push(p.clone());
        Ok(p)
    }

    fn stable_class(&mut self, period: f64) -> rollwave::Result<bool> {
        let p = self.solve_at(period)?;
        let opts = spectrum_options();
        let rep = compute_spectrum(&p, &xi_grid(period, opts.xi_points), &opts)?;
        Ok(rep.class == StabilityClass::Stable)
    }

    /// Bisects the stability class between `lo` and `hi`, which must differ.
    fn boundary(&mut self, mut lo: f64, mut hi: f64, width: f64) -> Result<f64, String> {
        let s_lo = self.stable_class(lo).map_err(|e| e.to_string())?;
        let s_hi = self.stable_class(hi).map_err(|e| e.to_string())?;
        if s_lo == s_hi {
            return Err(format!("no class change between X = {lo} and X = {hi}"));
        }
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            if self.stable_class(mid).map_err(|e| e.to_string())? == s_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn build_family() -> rollwave::Result<OrbitFamily> {
    let params = ModelParams::roll_wave_default();
    let hopf = family_hopf_point(&params, CLOSURE)?;
    let start = hopf_start(&params, CLOSURE, &hopf, 1e-3, 30, 256)?;
    let opts = ContinuationOptions { target_period: 30.0, requested_periods: vec![4.5, 6.2], ..Default::default() };
    continue_family(&start, CLOSURE, hopf, &opts)
}

fn hopf_threshold() -> Check {
    let admissible = |f: f64| {
        let p = ModelParams::new(f, 0.1, 2.0, 0.0).map_err(|e| e.to_string())?;
        hopf_analysis(&p, 1.0).map(|h| h.admissible).map_err(|e| e.to_string())
    };
    let (mut lo, mut hi) = (3.0, 6.0);
    if admissible(lo)? || !admissible(hi)? {
        return Ok((false, "no admissibility change on F ∈ [3, 6]".into()));
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if admissible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let f = 0.5 * (lo + hi);
    Ok(((f - 4.0).abs() < 1e-6, format!("boundary F = {f:.9}")))
}

fn constant_state_instability() -> Check {
    let p = ModelParams::roll_wave_default();
    let mut worst_rel = 0.0f64;
    let mut min_re = f64::INFINITY;
    let h = 1e-3;
    for i in 0..40 {
        let tau0 = 0.2 * (25.0f64).powf(i as f64 / 39.0);
        let cs = p.sound_speed(tau0);
        for c in [0.0, 0.5 * cs, cs] {
            let eq = Equilibrium::balanced(&p, tau0, c);
            let (_, d2) = neutral_branch_derivatives(&p, &eq);
            let l = |k: f64| neutral_branch(&p, &eq, k);
            let fd2 = (-l(2.0 * h) + 16.0 * l(h) - 30.0 * l(0.0) + 16.0 * l(-h) - l(-2.0 * h)) / (12.0 * h * h);
            worst_rel = worst_rel.max((fd2 - d2).norm() / d2.norm());
            min_re = min_re.min(d2.re);
        }
    }
    Ok((min_re > 0.0 && worst_rel < 1e-4, format!("min Re λ″(0) = {min_re:.3e}, closed form vs FD {worst_rel:.1e}")))
}

fn family_geometry(shared: &mut Shared) -> Check {
    let x_h = shared.family.hopf.period.ok_or("Hopf point not admissible")?;
    let lower = shared.boundary(4.5, 6.2, 0.05)?;
    let upper = shared.boundary(15.0, 25.0, 0.1)?;
    let within = |v: f64, t: f64| (v - t).abs() <= 0.1 * t;
    Ok((
        within(x_h, 3.9) && within(lower, 5.3) && within(upper, 20.6),
        format!("X_H = {x_h:.4}, window [{lower:.3}, {upper:.3}]"),
    ))
}

fn stable_wave(shared: &mut Shared) -> Check {
    let p = shared.member(6.2);
    let opts = spectrum_options();
    let rep = compute_spectrum(&p, &xi_grid(6.2, opts.xi_points), &opts).map_err(|e| e.to_string())?;
    let v = rep.verdicts;
    let pass = v.d1 && v.d2 && v.d3 && v.h4 && rep.max_real <= 5e-4;
    let detail = format!("D1 {} D2 {} D3' {} H4 {}, max Re λ = {:.2e}", v.d1, v.d2, v.d3, v.h4, rep.max_real);
    shared.stable = Some((p, rep));
    Ok((pass, detail))
}

fn hill_oracle() -> Check {
    let config = Config { cases: 5, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let strategy = (4.5f64..10.0, 0.05f64..0.5, 1.0f64..2.0, 0.0f64..1.0, 0.5f64..2.0, 0.0f64..1.0, 2.0f64..10.0, -1.0f64..1.0);
    let worst = std::cell::Cell::new(0.0f64);
    let n = 32;
    let result = runner.run(&strategy, |(f, nu, r, s, tau0, cfrac, period, xfrac)| {
        let p = ModelParams::new(f, nu, r, s).unwrap();
        let eq = Equilibrium::balanced(&p, tau0, cfrac * p.sound_speed(tau0));
        let co = build_coefficients(&PeriodicProfile::constant(&eq, &p, period, 256));
        let xi = xfrac * PI / period;
        let all = Window { re_min: f64::NEG_INFINITY, re_max: f64::INFINITY, im_max: f64::INFINITY };
        let ev = bloch_eigenvalues(&co, xi, n, &all).unwrap();
        prop_assert_eq!(ev.len(), 2 * (2 * n + 1));
        for j in -(n as i64)..=(n as i64) {
            let k = xi + 2.0 * PI * j as f64 / period;
            for root in constant_state_dispersion(&p, &eq, k).roots() {
                let d = ev.iter().map(|z| (z - root).norm()).fold(f64::INFINITY, f64::min);
                worst.set(worst.get().max(d));
                prop_assert!(d < 1e-8, "k = {}: {} off by {:e}", k, root, d);
            }
        }
        Ok(())
    });
    Ok((result.is_ok(), format!("worst root distance {:.1e} over 5 parameter sets, N = {n}", worst.get())))
}

fn whitham_evans(shared: &Shared) -> Check {
    let (p, rep) = shared.stable.as_ref().ok_or("stable-wave spectrum unavailable")?;
    let wd = whitham_jacobians(p, None).map_err(|e| e.to_string())?;
    let curves = critical_curves(rep).map_err(|e| e.to_string())?;
    let t = verify_tangency(&wd, &curves);
    let rays = [
        (Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)),
        (Complex64::new(0.3, 0.5), Complex64::new(1.0, 0.2)),
    ];
    let mut gammas = Vec::new();
    let mut converges = true;
    for (l0, n0) in rays {
        let d = leading_order_ratio(p, &wd, l0, n0, &halving_scales(7)).map_err(|e| e.to_string())?;
        converges &= d.converges;
        gammas.push(d.gamma);
    }
    let agree = (gammas[0] - gammas[1]).norm() / gammas[0].norm().max(gammas[1].norm());
    let nonzero = gammas.iter().all(|g| g.norm() > 1e-6);
    Ok((
        t.pass && converges && nonzero && agree < 0.05,
        format!("tangency mismatch {:.1e}, Γ = {:.3} / {:.3} (spread {:.1e})", t.mismatch, gammas[0], gammas[1], agree),
    ))
}

fn evans_checks(shared: &Shared) -> Check {
    let (p, rep) = shared.stable.as_ref().ok_or("stable-wave spectrum unavailable")?;
    let m0 = monodromy(p, Complex64::new(0.0, 0.0)).map_err(|e| e.to_string())?;
    let origin = m0.evans(Complex64::new(1.0, 0.0)).norm() / m0.norm().powi(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (i, s) in rep.samples.iter().enumerate().step_by(10).take(20) {
        let Some(&lambda) = s.eigenvalues.get(i / 10 % 3) else { continue };
        let m = monodromy(p, lambda).map_err(|e| e.to_string())?;
        let sigma = Complex64::from_polar(1.0, s.xi * p.period());
        worst = worst.max(m.evans(sigma).norm() / m.norm().powi(3));
        count += 1;
    }
    Ok((
        origin < 1e-7 && count == 20 && worst < 1e-5,
        format!("|D(0,1)|/‖Ψ‖³ = {origin:.1e}, {count} Hill eigenvalues with max |D|/‖Ψ‖³ = {worst:.1e}"),
    ))
}

fn metastability(shared: &Shared) -> Check {
    let p = shared.family.profiles.last().ok_or("empty family")?;
    let run = |cells: usize| {
        let opts = MetastabilityOptions { cells_per_period: cells, ..MetastabilityOptions::default() };
        run_metastability(p, &opts).map_err(|e| e.to_string())
    };
    let (coarse, fine) = (run(1024)?, run(2048)?);
    let grad: Vec<f64> = coarse.diagnostics.iter().map(|d| d.energy_gradient_region).collect();
    let flat: Vec<f64> = coarse.diagnostics.iter().map(|d| d.energy_constant_region).collect();
    let peak = grad.iter().cloned().fold(0.0, f64::max);
    let peak_at = grad.iter().position(|v| *v == peak).unwrap_or(0);
    let decays = decays_after_peak(&grad, 0.0) && peak_at < grad.len() / 4 && *grad.last().unwrap() < 0.6 * peak;
    let grows = flat.last().unwrap() > &(2.0 * flat[0]);
    let rel = |f: fn(&rollwave::simulate::Diagnostics) -> f64| {
        let scale = fine.diagnostics.iter().map(f).fold(0.0, f64::max);
        coarse.diagnostics.iter().zip(&fine.diagnostics).map(|(a, b)| (f(a) - f(b)).abs()).fold(0.0, f64::max) / scale
    };
    let change = rel(|d| d.energy_gradient_region).max(rel(|d| d.energy_constant_region));
    Ok((
        decays && grows && change < 0.1,
        format!(
            "gradient energy peaks at t = {:.2} then falls to {:.0}% by t = {:.1}; constant energy ×{:.1}; grid doubling {:.1e}",
            coarse.diagnostics[peak_at].t,
            100.0 * grad.last().unwrap() / peak,
            coarse.diagnostics.last().unwrap().t,
            flat.last().unwrap() / flat[0],
            change
        ),
    ))
}

fn stability_probe(shared: &Shared) -> Check {
    let stable = run_stability_probe(&shared.member(6.2), &ProbeOptions::default()).map_err(|e| e.to_string())?;
    let opts = ProbeOptions { horizon: 1000.0, ..ProbeOptions::default() };
    let unstable = run_stability_probe(&shared.member(4.5), &opts).map_err(|e| e.to_string())?;
    let crossed = unstable.history.iter().find(|d| d.linf_shift_opt > 100.0 * opts.epsilon).map(|d| d.t);
    Ok((
        stable.verdict == ProbeVerdict::Bounded && stable.max_shift_optimized < 10.0 * stable.epsilon && crossed.is_some(),
        format!(
            "X = 6.2 max {:.2} ε to T = 200; X = 4.5 passes 100 ε at t = {}",
            stable.max_shift_optimized / stable.epsilon,
            crossed.map_or("never".into(), |t| format!("{t:.0}"))
        ),
    ))
}

fn derivative_condition_all(shared: &Shared) -> Check {
    let all: Vec<&PeriodicProfile> = shared.family.profiles.iter().chain(&shared.extra).collect();
    let margin = all.iter().map(|p| derivative_condition(p).margin).fold(f64::INFINITY, f64::min);
    Ok((margin > 0.0, format!("{} waves, min (F⁻¹ − ν ū_x) = {margin:.4}", all.len())))
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        if !pass {
            failures += 1;
        }
        println!("[{}] {id:>2} {name}: {detail} ({:.1} s)", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    };
    report(1, "Hopf threshold", &mut hopf_threshold);
    report(2, "constant-state instability", &mut constant_state_instability);
    let mut shared = match build_family() {
        Ok(family) => Shared { family, extra: Vec::new(), stable: None },
        Err(e) => {
            println!("[FAIL] family continuation failed: {e}");
            std::process::exit(1);
        }
    };
    report(3, "family geometry", &mut || family_geometry(&mut shared));
    report(4, "stable wave", &mut || stable_wave(&mut shared));
    report(5, "Hill oracle", &mut hill_oracle);
    report(6, "Whitham tangency and Evans ratio", &mut || whitham_evans(&shared));
    report(7, "Evans origin and cross-validation", &mut || evans_checks(&shared));
    report(8, "metastability", &mut || metastability(&shared));
    report(9, "nonlinear stability probe", &mut || stability_probe(&shared));
    report(10, "derivative condition", &mut || derivative_condition_all(&shared));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
