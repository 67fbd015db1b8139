use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rollwave::bloch::{compute_spectrum, critical_curves, spectrum_csv, xi_grid, SpectrumReport};
use rollwave::evans::{evans_csv, evans_sweep, halving_scales, leading_order_ratio, monodromy, RatioDiagnostics};
use rollwave::model::{find_equilibria, hopf_analysis};
use rollwave::orbit::{
    check_h2_rank, continue_family, derivative_condition, family_hopf_point, hopf_start, read_index, read_profile,
    solve_periodic, write_family, write_profile, Constraint, PeriodicProfile, SolveOptions,
};
use rollwave::simulate::{
    decays_after_peak, diagnostics_csv, linear_rate_check, run_metastability, run_stability_probe, snapshot_text,
};
use rollwave::whitham::{whitham_jacobians, TangencyReport, WhithamData};
use serde::Serialize;
use serde_json::json;

use crate::config::{ProjectConfig, SimMode};
use crate::run::{sha256_hex, RunDir};
use crate::{CliError, Command, Target};

pub fn dispatch(command: &Command, cfg: &ProjectConfig, run: &mut RunDir) -> Result<(), CliError> {
    match command {
        Command::Equilibrium { q, c } => equilibrium(cfg, run, *q, *c),
        Command::Hopf { tau0 } => hopf(cfg, run, *tau0),
        Command::Orbit(t) => orbit(cfg, run, t),
        Command::Family => family(cfg, run),
        Command::Spectrum(t) => spectrum(cfg, run, t),
        Command::Whitham(t) => whitham(cfg, run, t),
        Command::Evans(t) => evans(cfg, run, t),
        Command::Simulate { target, .. } => simulate(cfg, run, target),
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn equilibrium(cfg: &ProjectConfig, run: &mut RunDir, q: f64, c: f64) -> Result<(), CliError> {
    let params = cfg.params()?;
    if !(q > 0.0) || !(c >= 0.0) {
        return Err(CliError::Config(format!("need q > 0 and c ≥ 0, got q = {q}, c = {c}")));
    }
    let eqs = find_equilibria(&params, q, c);
    let mut csv = String::from("tau0,u0,q,c,residual\n");
    println!("{:>22} {:>22} {:>10}", "tau0", "u0", "residual");
    for e in &eqs {
        let res = e.residual(&params);
        writeln!(csv, "{},{},{},{},{}", num(e.tau0), num(e.u0), num(e.q), num(e.c), num(res)).unwrap();
        println!("{:>22.16} {:>22.16} {:>10.2e}", e.tau0, e.u0, res);
    }
    run.write("equilibria.csv", csv)
}

fn hopf(cfg: &ProjectConfig, run: &mut RunDir, tau0: Option<f64>) -> Result<(), CliError> {
    let params = cfg.params()?;
    let h = match tau0 {
        Some(t) => hopf_analysis(&params, t)?,
        None => family_hopf_point(&params, cfg.closure())?,
    };
    println!("tau0 = {:.10}  u0 = {:.10}  c_s = {:.10}", h.tau0, h.u0, h.cs);
    match (h.k_h, h.period) {
        (Some(k), Some(x)) => println!("admissible: k_H = {k:.10}  X_H = {x:.10}"),
        _ => println!("not admissible"),
    }
    run.write_json("hopf.json", &h)
}

fn family_dir(cfg: &ProjectConfig) -> PathBuf {
    let key = serde_json::to_string(&(&cfg.model, &cfg.closure, &cfg.family)).expect("serializable");
    Path::new(&cfg.output.dir).join("cache").join(format!("family-{}", &sha256_hex(key.as_bytes())[..12]))
}

/// Family members, from the cache when present.
fn load_family(cfg: &ProjectConfig, run: &mut RunDir) -> Result<Vec<PeriodicProfile>, CliError> {
    let dir = family_dir(cfg);
    let index = dir.join("index.txt");
    if !index.exists() {
        let params = cfg.params()?;
        let closure = cfg.closure();
        let hopf = family_hopf_point(&params, closure)?;
        let f = &cfg.family;
        let start = hopf_start(&params, closure, &hopf, f.hopf_amplitude, f.segments, f.grid)?;
        let family = continue_family(&start, closure, hopf, &cfg.continuation())?;
        // Written aside and renamed so a partial cache is never visible.
        let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
        write_family(&tmp, &family)?;
        if fs::rename(&tmp, &dir).is_err() {
            fs::remove_dir_all(&tmp)?;
        }
    } else {
        run.cache_hits.push(dir.display().to_string());
    }
    run.add_input(&index)?;
    read_index(&dir)?
        .iter()
        .map(|e| read_profile(&dir.join(&e.file)).map_err(CliError::from))
        .collect()
}

fn profile_for(cfg: &ProjectConfig, run: &mut RunDir, target: &Target) -> Result<PeriodicProfile, CliError> {
    if let Some(path) = &target.profile {
        run.add_input(path)?;
        return Ok(read_profile(path)?);
    }
    let period = target.period.ok_or_else(|| CliError::Config("either --period or --profile is required".into()))?;
    member_at(cfg, run, period)
}

fn member_at(cfg: &ProjectConfig, run: &mut RunDir, period: f64) -> Result<PeriodicProfile, CliError> {
    let members = load_family(cfg, run)?;
    let (lo, hi) = (members[0].period(), members[members.len() - 1].period());
    if !(period >= lo && period <= hi) {
        return Err(CliError::Config(format!("period {period} outside the computed family range [{lo:.4}, {hi:.4}]")));
    }
    let nearest = members
        .iter()
        .min_by(|a, b| (a.period() - period).abs().total_cmp(&(b.period() - period).abs()))
        .expect("non-empty family");
    if (nearest.period() - period).abs() <= 1e-9 * period {
        return Ok(nearest.clone());
    }
    let opts = SolveOptions {
        tol: cfg.family.tol,
        grid: cfg.family.grid,
        closure: Some(cfg.closure()),
        ..SolveOptions::default()
    };
    Ok(solve_periodic(&nearest.spec, &nearest.params, Constraint::FixPeriod(period), &opts)?)
}

fn orbit(cfg: &ProjectConfig, run: &mut RunDir, target: &Target) -> Result<(), CliError> {
    let p = profile_for(cfg, run, target)?;
    let h2 = check_h2_rank(&p)?;
    let dc = derivative_condition(&p);
    println!("X = {:.10}  c = {:.10}  q = {:.10}  amplitude = {:.6}", p.period(), p.spec.c, p.spec.q, p.amplitude());
    println!("min tau = {:.6}  ODE residual = {:.2e}  H2 full rank = {}", p.min_tau(), p.ode_residual(), h2.full_rank);
    let path = run.path.join("profile.txt");
    write_profile(&path, &p)?;
    let bytes = fs::read(&path)?;
    run.write("profile.txt", bytes)?;
    run.write_json(
        "orbit.json",
        &json!({
            "period": p.period(),
            "c": p.spec.c,
            "q": p.spec.q,
            "amplitude": p.amplitude(),
            "min_tau": p.min_tau(),
            "grid": p.len(),
            "ode_residual": p.ode_residual(),
            "periodicity_defect": p.periodicity_defect,
            "derivative_condition": dc,
            "h2": h2,
        }),
    )
}

fn family(cfg: &ProjectConfig, run: &mut RunDir) -> Result<(), CliError> {
    let members = load_family(cfg, run)?;
    let mut csv = String::from("X,c,q,amplitude,derivative_margin\n");
    for p in &members {
        let dc = derivative_condition(p);
        writeln!(csv, "{},{},{},{},{}", num(p.period()), num(p.spec.c), num(p.spec.q), num(p.amplitude()), num(dc.margin))
            .unwrap();
    }
    let (first, last) = (&members[0], &members[members.len() - 1]);
    println!("{} members, X from {:.4} to {:.4}", members.len(), first.period(), last.period());
    println!("c from {:.8} to {:.8}", first.spec.c, last.spec.c);
    run.write("family.csv", csv)
}

#[derive(Serialize)]
struct WhithamSummary {
    #[serde(flatten)]
    data: WhithamData,
    bloch_speeds: [Complex64; 2],
    tangency: Option<TangencyReport>,
}

fn whitham_summary(wd: WhithamData, report: Option<&SpectrumReport>) -> WhithamSummary {
    let tangency = report.and_then(|r| critical_curves(r).ok()).map(|c| rollwave::whitham::verify_tangency(&wd, &c));
    WhithamSummary { bloch_speeds: wd.bloch_speeds(), data: wd, tangency }
}

fn run_spectrum(cfg: &ProjectConfig, p: &PeriodicProfile) -> Result<SpectrumReport, CliError> {
    let opts = cfg.spectrum_options();
    Ok(compute_spectrum(p, &xi_grid(p.period(), opts.xi_points), &opts)?)
}

fn spectrum(cfg: &ProjectConfig, run: &mut RunDir, target: &Target) -> Result<(), CliError> {
    let p = profile_for(cfg, run, target)?;
    let report = run_spectrum(cfg, &p)?;
    let whitham = match whitham_jacobians(&p, Some(cfg.whitham.relative_step * p.spec.q.abs().max(1.0))) {
        Ok(wd) => serde_json::to_value(whitham_summary(wd, Some(&report))).expect("serializable"),
        Err(e) => json!({ "error": e.to_string() }),
    };
    println!("X = {:.6}  verdict: {}", p.period(), serde_json::to_value(report.class).expect("serializable"));
    println!("max Re λ = {:.4e} at ξ = {:.4}", report.max_real, report.max_real_at.0);
    println!("D1 {}  D2 {}  D3' {}  H4 {}", report.verdicts.d1, report.verdicts.d2, report.verdicts.d3, report.verdicts.h4);
    run.write("spectrum.csv", spectrum_csv(&report))?;
    run.write_json(
        "verdict.json",
        &json!({
            "period": report.period,
            "class": report.class,
            "verdicts": report.verdicts,
            "max_real": report.max_real,
            "max_real_at": { "xi": report.max_real_at.0, "lambda": report.max_real_at.1 },
            "zero_count": report.zero_count,
            "kernel_dimension": report.kernel_dimension,
            "theta": report.theta,
            "critical_curves": report.curves.as_ref().map(|c| &c.fits),
            "samples": report.samples.len(),
            "converged": report.samples.iter().filter(|s| s.converged).count(),
            "whitham": whitham,
        }),
    )
}

fn whitham(cfg: &ProjectConfig, run: &mut RunDir, target: &Target) -> Result<(), CliError> {
    let p = profile_for(cfg, run, target)?;
    let wd = whitham_jacobians(&p, Some(cfg.whitham.relative_step * p.spec.q.abs().max(1.0)))?;
    let report = if cfg.whitham.tangency { Some(run_spectrum(cfg, &p)?) } else { None };
    let summary = whitham_summary(wd, report.as_ref());
    println!("X = {:.6}  class: {}", p.period(), serde_json::to_value(wd.class).expect("serializable"));
    println!("z = {:.6}, {:.6}  ∂M/∂q = {:.4e}", wd.z[0], wd.z[1], wd.dm_dq);
    if let Some(t) = &summary.tangency {
        println!("tangency mismatch {:.2e} ({})", t.mismatch, if t.pass { "pass" } else { "fail" });
    }
    run.write_json("whitham.json", &summary)
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn evans(cfg: &ProjectConfig, run: &mut RunDir, target: &Target) -> Result<(), CliError> {
    let p = profile_for(cfg, run, target)?;
    let e = &cfg.evans;
    let origin = monodromy(&p, Complex64::new(0.0, 0.0))?;
    let d0 = origin.evans(Complex64::new(1.0, 0.0)).norm();
    let scale = origin.norm().powi(3);
    println!("|D(0,1)| = {:.3e}  ‖Ψ‖ = {:.3e}  relative {:.3e}", d0, origin.norm(), d0 / scale);

    let lambdas: Vec<Complex64> = linspace(e.re_min, e.re_max, e.re_points)
        .into_iter()
        .flat_map(|re| linspace(e.im_min, e.im_max, e.im_points).into_iter().map(move |im| Complex64::new(re, im)))
        .collect();
    let phases: Vec<f64> = (0..e.phases).map(|k| 2.0 * std::f64::consts::PI * k as f64 / e.phases as f64).collect();
    let samples = evans_sweep(&p, &lambdas, &phases)?;
    run.write("evans.csv", evans_csv(&samples))?;

    let mut rays: Vec<RatioDiagnostics> = Vec::new();
    if !e.rays.is_empty() {
        let wd = whitham_jacobians(&p, Some(cfg.whitham.relative_step * p.spec.q.abs().max(1.0)))?;
        for r in &e.rays {
            let d = leading_order_ratio(&p, &wd, Complex64::new(r[0], r[1]), Complex64::new(r[2], r[3]), &halving_scales(e.ratio_scales))?;
            println!("ray λ₀ = {} ν₀ = {}: Γ = {:.6}  slope {:.3}", d.lambda0, d.nu0, d.gamma, d.deviation_slope);
            rays.push(d);
        }
    }
    let spread = rays
        .iter()
        .flat_map(|a| rays.iter().map(move |b| (a.gamma - b.gamma).norm() / a.gamma.norm().max(b.gamma.norm())))
        .fold(0.0, f64::max);
    run.write_json(
        "evans.json",
        &json!({
            "period": p.period(),
            "origin": {
                "abs_d": d0,
                "psi_norm": origin.norm(),
                "relative": d0 / scale,
                "abel_residual": origin.abel_residual,
                "condition": origin.condition,
                "pass": d0 < 1e-7 * scale,
            },
            "rays": rays,
            "gamma_spread": spread,
        }),
    )
}

fn simulate(cfg: &ProjectConfig, run: &mut RunDir, target: &Target) -> Result<(), CliError> {
    match cfg.simulate.mode {
        SimMode::Probe => {
            let p = profile_for(cfg, run, target)?;
            let report = run_stability_probe(&p, &cfg.probe_options())?;
            println!(
                "X = {:.4}: {} (max shift-optimized distance {:.3e} = {:.2} ε)",
                p.period(),
                serde_json::to_value(report.verdict).expect("serializable"),
                report.max_shift_optimized,
                report.max_shift_optimized / report.epsilon
            );
            run.write("diagnostics.csv", diagnostics_csv(&report.history))?;
            run.write_json(
                "report.json",
                &json!({
                    "period": p.period(),
                    "verdict": report.verdict,
                    "epsilon": report.epsilon,
                    "max_shift_optimized": report.max_shift_optimized,
                    "final_time": report.history.last().map(|d| d.t),
                }),
            )
        }
        SimMode::Metastability => {
            // The largest computed wave stands in for the homoclinic.
            let target = if target.period.is_none() && target.profile.is_none() {
                Target { period: Some(cfg.family.target_period), profile: None }
            } else {
                target.clone()
            };
            let p = profile_for(cfg, run, &target)?;
            let out = run_metastability(&p, &cfg.metastability_options())?;
            let grad: Vec<f64> = out.diagnostics.iter().map(|d| d.energy_gradient_region).collect();
            let decays = decays_after_peak(&grad, 1e-3);
            println!(
                "pulse at {:.3} width {:.3}; cutoff t = {:.3}; gradient-region energy decays after peak: {}",
                out.pulse_center, out.pulse_width, out.cutoff, decays
            );
            run.write("diagnostics.csv", diagnostics_csv(&out.diagnostics))?;
            let mut files = Vec::new();
            for s in &out.snapshots {
                let name = format!("snapshot_t{:09.4}.txt", s.t);
                run.write(&name, snapshot_text(s, out.dx))?;
                files.push(name);
            }
            run.write_json(
                "report.json",
                &json!({
                    "period": p.period(),
                    "pulse_center": out.pulse_center,
                    "pulse_width": out.pulse_width,
                    "convection_speed": out.convection_speed,
                    "cutoff": out.cutoff,
                    "gradient_energy_decays_after_peak": decays,
                    "snapshots": files,
                }),
            )
        }
        SimMode::Rate => {
            let p = profile_for(cfg, run, target)?;
            let r = linear_rate_check(&p, cfg.simulate.rate.xi, &cfg.rate_options())?;
            let rel = (r.measured_rate - r.lambda.re).abs() / r.lambda.re.abs();
            println!(
                "ξ = {:.4} on {} periods: measured rate {:.4e}, Hill Re λ = {:.4e} (relative difference {:.2e})",
                r.xi, r.copies, r.measured_rate, r.lambda.re, rel
            );
            let mut csv = String::from("t,norm\n");
            for (t, n) in &r.history {
                writeln!(csv, "{},{}", num(*t), num(*n)).unwrap();
            }
            run.write("rate.csv", csv)?;
            run.write_json(
                "report.json",
                &json!({
                    "period": p.period(),
                    "xi": r.xi,
                    "copies": r.copies,
                    "lambda": r.lambda,
                    "measured_rate": r.measured_rate,
                    "relative_difference": rel,
                }),
            )
        }
    }
}
