//! Pseudo-arclength continuation of the orbit family from its Hopf point.

use serde::{Deserialize, Serialize};

use super::shooting::{self, ExtraRow, Shooter, ShootingState};
use super::{Closure, Constraint, PeriodicProfile, SolveOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{hopf_analysis, HopfPoint, ModelParams};

/// Hopf point of the family slice selected by `closure`.
///
/// Under the end-state closure the balanced state `τ₋` is an equilibrium for
/// every `c` and undergoes its own Hopf bifurcation; that point does not seed
/// the wave train accumulating on `τ₋`, so the search looks for the other
/// equilibrium. Among admissible candidates the one nearest `τ₋` is returned.
pub fn family_hopf_point(params: &ModelParams, closure: Closure) -> Result<HopfPoint> {
    let mismatch = |t: f64| {
        let cs = params.sound_speed(t);
        params.balanced_velocity(t) + cs * t - closure.q(params, cs)
    };
    let (reference, exclude) = match closure {
        Closure::EndState { u_minus } => {
            let t = super::end_state_tau(params, u_minus);
            (t, Some(t))
        }
        Closure::FixedQ(q) => (q.powf(-params.r / (params.s + 1.0)), None),
    };
    let (lo, hi) = (reference * 1e-2, reference * 1e2);
    let scan = 20_000;
    let at = |i: usize| lo * (hi / lo).powf(i as f64 / scan as f64);
    let mut candidates = Vec::new();
    let mut prev = (at(0), mismatch(at(0)));
    for i in 1..=scan {
        let t = at(i);
        let f = mismatch(t);
        if prev.1.is_finite() && f.is_finite() && prev.1 * f <= 0.0 {
            let (mut a, mut b, mut fa) = (prev.0, t, prev.1);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let fm = mismatch(mid);
                if fa * fm <= 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
                if b - a < 1e-15 * b {
                    break;
                }
            }
            let root = 0.5 * (a + b);
            let trivial = exclude.is_some_and(|e| (root - e).abs() < 1e-8 * e);
            if !trivial {
                candidates.push(root);
            }
        }
        prev = (t, f);
    }
    candidates
        .into_iter()
        .filter_map(|t| hopf_analysis(params, t).ok())
        .filter(|h| h.admissible)
        .min_by(|a, b| (a.tau0 - reference).abs().total_cmp(&(b.tau0 - reference).abs()))
        .ok_or(Error::NoHopf)
}

/// Small-amplitude orbit near the Hopf point: crest fixed at `τ₀ + amplitude`.
pub fn hopf_start(
    params: &ModelParams,
    closure: Closure,
    hopf: &HopfPoint,
    amplitude: f64,
    segments: usize,
    grid: usize,
) -> Result<PeriodicProfile> {
    let k = hopf.k_h.ok_or_else(|| Error::Domain("Hopf point is not admissible".into()))?;
    let period = 2.0 * std::f64::consts::PI / k;
    let nodes = (0..segments)
        .map(|i| {
            let x = i as f64 * period / segments as f64;
            [hopf.tau0 + amplitude * (k * x).cos(), -amplitude * k * (k * x).sin()]
        })
        .collect();
    let opts = SolveOptions { grid, closure: Some(closure), segments: Some(segments), ..SolveOptions::default() };
    shooting::solve_from_nodes(
        params,
        closure,
        ShootingState { nodes, period, c: hopf.cs },
        Constraint::FixPeak(hopf.tau0 + amplitude),
        &opts,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    pub target_period: f64,
    /// Periods at which orbits are solved exactly and stored.
    pub requested_periods: Vec<f64>,
    pub ds_initial: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub grid: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            target_period: 30.0,
            requested_periods: Vec::new(),
            ds_initial: 0.05,
            ds_min: 1e-7,
            ds_max: 1.0,
            grid: 256,
            tol: 1e-10,
            max_iter: 12,
        }
    }
}

/// Bookkeeping for one stored family member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub arclength: f64,
    pub period: f64,
    pub c: f64,
    pub q: f64,
    pub amplitude: f64,
    /// Whether the period was requested explicitly.
    pub requested: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitFamily {
    pub params: ModelParams,
    pub closure: Closure,
    pub hopf: HopfPoint,
    pub points: Vec<FamilyPoint>,
    pub profiles: Vec<PeriodicProfile>,
}

impl OrbitFamily {
    /// The stored member whose period is closest to `period`.
    pub fn nearest(&self, period: f64) -> Option<&PeriodicProfile> {
        self.profiles
            .iter()
            .min_by(|a, b| (a.period() - period).abs().total_cmp(&(b.period() - period).abs()))
    }
}

/// Continues from `start` in the direction of increasing period up to
/// `opts.target_period`, with the number of shooting segments of `start`
/// held fixed.
pub fn continue_family(
    start: &PeriodicProfile,
    closure: Closure,
    hopf: HopfPoint,
    opts: &ContinuationOptions,
) -> Result<OrbitFamily> {
    let params = start.params;
    let shooter = Shooter { params, closure };
    let mut state = ShootingState { nodes: start.nodes.clone(), period: start.period(), c: start.spec.c };
    let mut z = state.to_vec();
    let n = z.len();

    let (_, jac) = shooter.evaluate(&state, true)?;
    let jac = jac.expect("jacobian requested");
    let mut tangent = linalg::null_vector(&jac)?;
    if tangent[n - 2] < 0.0 {
        tangent.iter_mut().for_each(|t| *t = -*t);
    }

    let mut requested: Vec<f64> = opts
        .requested_periods
        .iter()
        .copied()
        .filter(|x| *x > state.period && *x < opts.target_period)
        .collect();
    requested.sort_by(f64::total_cmp);
    requested.push(opts.target_period);
    let mut next_request = 0;

    let mut family = OrbitFamily { params, closure, hopf, points: Vec::new(), profiles: Vec::new() };
    let mut arclength = 0.0;
    push_member(&mut family, start.clone(), arclength, false);

    let mut ds = opts.ds_initial;
    let solve_opts = SolveOptions {
        tol: opts.tol,
        max_iter: 50,
        segments: Some(start.nodes.len()),
        grid: opts.grid,
        closure: Some(closure),
    };
    while next_request < requested.len() {
        let predictor: Vec<f64> = z.iter().zip(&tangent).map(|(a, t)| a + ds * t).collect();
        let outcome = shooting::newton(
            &shooter,
            ShootingState::from_vec(&predictor),
            &ExtraRow::Arclength { tangent: &tangent, predictor: &predictor },
            opts.tol,
            opts.max_iter,
        );
        let accepted = match outcome {
            Ok(out) if out.state.period > 0.0 => out,
            _ => {
                ds *= 0.5;
                if ds < opts.ds_min {
                    return Err(Error::PathLost { period: state.period });
                }
                continue;
            }
        };
        let z_new = accepted.state.to_vec();
        let step: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
        let step_norm = linalg::norm(&step);
        let new_period = accepted.state.period;

        // Requested periods crossed by this step are solved exactly.
        while next_request < requested.len() && new_period >= requested[next_request] {
            let target = requested[next_request];
            let theta = (target - state.period) / (new_period - state.period);
            let guess: Vec<f64> = z.iter().zip(&z_new).map(|(a, b)| a + theta * (b - a)).collect();
            let profile = shooting::solve_from_nodes(
                &params,
                closure,
                ShootingState::from_vec(&guess),
                Constraint::FixPeriod(target),
                &solve_opts,
            )?;
            push_member(&mut family, profile, arclength + theta * step_norm, true);
            next_request += 1;
        }

        arclength += step_norm;
        tangent = step.iter().map(|s| s / step_norm).collect();
        z = z_new;
        state = accepted.state;
        if next_request < requested.len() && state.period > family.points.last().map_or(0.0, |p| p.period) {
            let profile = shooting::profile_from_state(&params, closure, state.clone(), opts.grid)?;
            push_member(&mut family, profile, arclength, false);
        }
        ds = if accepted.iterations <= 3 { (ds * 1.5).min(opts.ds_max) } else { ds * 0.7 };
    }
    Ok(family)
}

fn push_member(family: &mut OrbitFamily, profile: PeriodicProfile, arclength: f64, requested: bool) {
    // Only strictly increasing periods are kept so X is monotone along the stored path.
    if let Some(last) = family.points.last() {
        if profile.period() <= last.period {
            return;
        }
    }
    family.points.push(FamilyPoint {
        arclength,
        period: profile.period(),
        c: profile.spec.c,
        q: profile.spec.q,
        amplitude: profile.amplitude(),
        requested,
    });
    family.profiles.push(profile);
}
