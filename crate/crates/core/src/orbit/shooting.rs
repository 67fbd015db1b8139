//! Multiple-shooting Newton solver for periodic orbits.
//!
//! The period is split into `M` equal segments with nodes `y_i = (τ, τ')(iX/M)`.
//! Node 0 is pinned to `(b₁, 0)` (phase condition at the crest). The unknown
//! vector is `z = [b₁, y₁, …, y_{M−1}, X, c]` and the `2M` matching conditions
//! `φ_{X/M}(y_i) − y_{i+1}` (indices mod `M`) are closed by one extra scalar
//! equation: a constraint, or a pseudo-arclength row during continuation.

use faer::Mat;
use serde::{Deserialize, Serialize};

use super::{default_integrator, Closure, OrbitSpec, PeriodicProfile, ProfileOde};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelParams;

/// Scalar condition that selects one orbit from the one-parameter family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Constraint {
    FixPeriod(f64),
    FixSpeed(f64),
    /// Fixes the crest value `b₁ = max τ̄`.
    FixPeak(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Number of shooting segments; `None` picks one per unit of period (at least 4).
    pub segments: Option<usize>,
    /// Initial grid size; doubled until the profile residual is below 1e−8.
    pub grid: usize,
    /// `None` holds `q` at the value in the guess.
    pub closure: Option<Closure>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, segments: None, grid: 256, closure: None }
    }
}

pub(crate) fn default_segments(period: f64) -> usize {
    (period.ceil() as usize).max(4)
}

/// Unknowns of the shooting system in structured form.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ShootingState {
    pub nodes: Vec<[f64; 2]>,
    pub period: f64,
    pub c: f64,
}

impl ShootingState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.nodes.len() + 1);
        z.push(self.nodes[0][0]);
        for n in &self.nodes[1..] {
            z.extend_from_slice(n);
        }
        z.push(self.period);
        z.push(self.c);
        z
    }

    pub fn from_vec(z: &[f64]) -> Self {
        let m = (z.len() - 1) / 2;
        let mut nodes = Vec::with_capacity(m);
        nodes.push([z[0], 0.0]);
        for i in 1..m {
            nodes.push([z[2 * i - 1], z[2 * i]]);
        }
        Self { nodes, period: z[2 * m - 1], c: z[2 * m] }
    }

    pub fn dim(&self) -> usize {
        2 * self.nodes.len() + 1
    }
}

/// Segment end state together with its sensitivities.
struct SegmentFlow {
    end: [f64; 2],
    /// ∂end/∂(τ, τ')(start), column-major.
    phi: [[f64; 2]; 2],
    d_c: [f64; 2],
    d_q: [f64; 2],
    slope_end: [f64; 2],
}

fn flow_segment(params: &ModelParams, c: f64, q: f64, start: [f64; 2], length: f64) -> Result<SegmentFlow> {
    let ode = ProfileOde::new(params, c, q);
    let mut y = [start[0], start[1], 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    default_integrator()
        .integrate(
            |_, y, dy| {
                let Some(g) = ode.accel_gradient(y[0], y[1]) else { return false };
                dy[0] = y[1];
                dy[1] = g.g;
                // Columns of Φ, then S_c and S_q, each advanced by J = [[0, 1], [g_τ, g_p]].
                for col in 0..4 {
                    let a = y[2 + 2 * col];
                    let b = y[3 + 2 * col];
                    dy[2 + 2 * col] = b;
                    dy[3 + 2 * col] = g.d_tau * a + g.d_slope * b;
                }
                dy[7] += g.d_c;
                dy[9] += g.d_q;
                true
            },
            0.0,
            &mut y,
            length,
        )
        .map_err(Error::from)?;
    let accel = ode.accel(y[0], y[1]).ok_or_else(|| Error::Domain("segment ended outside the domain".into()))?;
    Ok(SegmentFlow {
        end: [y[0], y[1]],
        phi: [[y[2], y[3]], [y[4], y[5]]],
        d_c: [y[6], y[7]],
        d_q: [y[8], y[9]],
        slope_end: [y[1], accel],
    })
}

/// The matching residual and its `2M × (2M+1)` Jacobian.
pub(crate) struct Shooter {
    pub params: ModelParams,
    pub closure: Closure,
}

impl Shooter {
    pub fn evaluate(&self, state: &ShootingState, with_jacobian: bool) -> Result<(Vec<f64>, Option<Mat<f64>>)> {
        let m = state.nodes.len();
        if !(state.period > 0.0) || !(state.c > 0.0) {
            return Err(Error::Domain(format!("period {} and speed {} must be positive", state.period, state.c)));
        }
        let q = self.closure.q(&self.params, state.c);
        let dq = self.closure.dq_dc(&self.params);
        let seg = state.period / m as f64;
        let n = state.dim();
        let mut res = vec![0.0; 2 * m];
        let mut jac = with_jacobian.then(|| Mat::<f64>::zeros(2 * m, n));
        for i in 0..m {
            let flow = flow_segment(&self.params, state.c, q, state.nodes[i], seg)
                .map_err(|e| match e {
                    Error::Integration { at, reason } => Error::Integration { at: at + i as f64 * seg, reason },
                    other => other,
                })?;
            let next = state.nodes[(i + 1) % m];
            for r in 0..2 {
                res[2 * i + r] = flow.end[r] - next[r];
            }
            let Some(jac) = jac.as_mut() else { continue };
            for r in 0..2 {
                let row = 2 * i + r;
                // Derivative with respect to the start node.
                if i == 0 {
                    jac[(row, 0)] += flow.phi[0][r];
                } else {
                    jac[(row, 2 * i - 1)] += flow.phi[0][r];
                    jac[(row, 2 * i)] += flow.phi[1][r];
                }
                // Derivative with respect to the end node.
                if i + 1 == m {
                    if r == 0 {
                        jac[(row, 0)] -= 1.0;
                    }
                } else {
                    jac[(row, 2 * i + 1 + r)] -= 1.0;
                }
                jac[(row, n - 2)] = flow.slope_end[r] / m as f64;
                jac[(row, n - 1)] = flow.d_c[r] + flow.d_q[r] * dq;
            }
        }
        Ok((res, jac))
    }
}

/// Extra scalar equation appended to the matching conditions.
pub(crate) enum ExtraRow<'a> {
    Constraint(Constraint),
    Arclength { tangent: &'a [f64], predictor: &'a [f64] },
}

impl ExtraRow<'_> {
    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let n = z.len();
        let unit = |k: usize| {
            let mut row = vec![0.0; n];
            row[k] = 1.0;
            row
        };
        match self {
            ExtraRow::Constraint(Constraint::FixPeriod(x)) => (z[n - 2] - x, unit(n - 2)),
            ExtraRow::Constraint(Constraint::FixSpeed(c)) => (z[n - 1] - c, unit(n - 1)),
            ExtraRow::Constraint(Constraint::FixPeak(b)) => (z[0] - b, unit(0)),
            ExtraRow::Arclength { tangent, predictor } => {
                let d: Vec<f64> = z.iter().zip(predictor.iter()).map(|(a, b)| a - b).collect();
                (linalg::dot(tangent, &d), tangent.to_vec())
            }
        }
    }
}

pub(crate) struct NewtonOutcome {
    pub state: ShootingState,
    pub iterations: usize,
}

const RANK_RATIO: f64 = 1e-11;

/// Damped Newton on the square system; halves the step when the residual
/// grows or an intermediate iterate leaves the domain.
pub(crate) fn newton(
    shooter: &Shooter,
    start: ShootingState,
    extra: &ExtraRow<'_>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let assemble = |state: &ShootingState| -> Result<(Vec<f64>, Mat<f64>)> {
        let (mut res, jac) = shooter.evaluate(state, true)?;
        let jac = jac.expect("jacobian requested");
        let z = state.to_vec();
        let (e, row) = extra.eval(&z);
        res.push(e);
        let n = z.len();
        let full = Mat::<f64>::from_fn(n, n, |i, j| if i + 1 < n { jac[(i, j)] } else { row[j] });
        Ok((res, full))
    };
    let mut state = start;
    let (mut res, mut jac) = assemble(&state)?;
    let mut norm = linalg::max_abs(&res);
    for iter in 0..max_iter {
        if norm < tol {
            return Ok(NewtonOutcome { state, iterations: iter });
        }
        // Columns are equilibrated first: near the homoclinic limit the speed
        // column is many orders larger than the rest without any loss of rank.
        let sv = linalg::singular_values(&linalg::equilibrate_columns(&jac))?;
        let smin = *sv.last().unwrap();
        if smin <= RANK_RATIO * sv[0] {
            return Err(Error::RankDeficient { sigma_min: smin / sv[0] });
        }
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let dz = linalg::solve(&jac, &neg);
        let z = state.to_vec();
        let mut damping = 1.0;
        loop {
            let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + damping * b).collect();
            let trial_state = ShootingState::from_vec(&trial);
            let last_try = damping < 1.0 / 64.0;
            match assemble(&trial_state) {
                Ok((r, j)) => {
                    let new_norm = linalg::max_abs(&r);
                    if new_norm < 2.0 * norm.max(tol) {
                        state = trial_state;
                        res = r;
                        jac = j;
                        norm = new_norm;
                        break;
                    }
                    if last_try {
                        return Err(Error::NoConvergence { iterations: iter + 1, residual: norm });
                    }
                }
                Err(err) if last_try => return Err(err),
                Err(_) => {}
            }
            damping *= 0.5;
        }
    }
    if norm < tol {
        Ok(NewtonOutcome { state, iterations: max_iter })
    } else {
        Err(Error::NoConvergence { iterations: max_iter, residual: norm })
    }
}

/// Shooting nodes from a single trajectory started at `b`.
pub(crate) fn nodes_by_integration(spec: &OrbitSpec, params: &ModelParams, m: usize) -> Result<Vec<[f64; 2]>> {
    let xs: Vec<f64> = (0..m).map(|i| i as f64 * spec.period / m as f64).collect();
    super::integrate_profile(spec, params, &xs)
}

/// Solves the periodic boundary-value problem starting from `guess`.
///
/// The phase condition `τ'(0) = 0` is imposed by overwriting `guess.b[1]`.
pub fn solve_periodic(
    guess: &OrbitSpec,
    params: &ModelParams,
    constraint: Constraint,
    opts: &SolveOptions,
) -> Result<PeriodicProfile> {
    let m = opts.segments.unwrap_or_else(|| default_segments(guess.period));
    let mut start = OrbitSpec { b: [guess.b[0], 0.0], ..*guess };
    if let Constraint::FixPeak(b) = constraint {
        start.b[0] = b;
    }
    let nodes = nodes_by_integration(&start, params, m)?;
    let closure = opts.closure.unwrap_or(Closure::FixedQ(guess.q));
    solve_from_nodes(params, closure, ShootingState { nodes, period: guess.period, c: guess.c }, constraint, opts)
}

/// Re-solves `profile` at Lagrangian constants `(c, q)`, starting from its
/// nodes; the period is free.
pub fn shooting_solve_fixed(profile: &PeriodicProfile, c: f64, q: f64) -> Result<PeriodicProfile> {
    let start = ShootingState { nodes: profile.nodes.clone(), period: profile.period(), c };
    let opts = SolveOptions { grid: profile.len(), ..SolveOptions::default() };
    solve_from_nodes(&profile.params, Closure::FixedQ(q), start, Constraint::FixSpeed(c), &opts)
}

pub(crate) fn solve_from_nodes(
    params: &ModelParams,
    closure: Closure,
    start: ShootingState,
    constraint: Constraint,
    opts: &SolveOptions,
) -> Result<PeriodicProfile> {
    let shooter = Shooter { params: *params, closure };
    let out = newton(&shooter, start, &ExtraRow::Constraint(constraint), opts.tol, opts.max_iter)?;
    profile_from_state(params, closure, out.state, opts.grid)
}

pub(crate) fn profile_from_state(
    params: &ModelParams,
    closure: Closure,
    state: ShootingState,
    grid: usize,
) -> Result<PeriodicProfile> {
    let q = closure.q(params, state.c);
    let spec = OrbitSpec { period: state.period, c: state.c, q, b: state.nodes[0] };
    let coarse = PeriodicProfile::from_nodes(spec, *params, state.nodes, grid)?;
    let profile = coarse.with_resolved_grid(grid, 1e-8, 16 * grid)?;
    if profile.min_tau() <= 0.0 {
        return Err(Error::Domain("profile reaches vacuum".into()));
    }
    Ok(profile)
}

/// Singular-value diagnostic of the `2 × 5` Jacobian of
/// `H(X, c, q, b) = (τ, τ')(X) − b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Diagnostic {
    /// Columns ordered as `(X, c, q, b₁, b₂)`.
    pub jacobian: [[f64; 5]; 2],
    pub singular_values: [f64; 2],
    pub full_rank: bool,
    pub null_dimension: usize,
}

const H2_RANK_TOL: f64 = 1e-6;

/// Central-difference Jacobian of `H` with relative step `1e−6`.
pub fn check_h2_rank(profile: &PeriodicProfile) -> Result<H2Diagnostic> {
    let spec = profile.spec;
    let params = profile.params;
    let base = [spec.period, spec.c, spec.q, spec.b[0], spec.b[1]];
    let h_map = |v: &[f64; 5]| -> Result<[f64; 2]> {
        let s = OrbitSpec { period: v[0], c: v[1], q: v[2], b: [v[3], v[4]] };
        let end = super::integrate_profile(&s, &params, &[s.period])?[0];
        Ok([end[0] - s.b[0], end[1] - s.b[1]])
    };
    let mut jacobian = [[0.0; 5]; 2];
    for k in 0..5 {
        let step = 1e-6 * base[k].abs().max(1.0);
        let mut plus = base;
        let mut minus = base;
        plus[k] += step;
        minus[k] -= step;
        let (hp, hm) = (h_map(&plus)?, h_map(&minus)?);
        for r in 0..2 {
            jacobian[r][k] = (hp[r] - hm[r]) / (2.0 * step);
        }
    }
    let mat = Mat::<f64>::from_fn(2, 5, |i, j| jacobian[i][j]);
    let sv = linalg::singular_values(&mat)?;
    let rank = sv.iter().filter(|s| **s > H2_RANK_TOL).count();
    Ok(H2Diagnostic {
        jacobian,
        singular_values: [sv[0], sv[1]],
        full_rank: rank == 2,
        null_dimension: 5 - rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Equilibrium;

    #[test]
    fn state_vector_round_trip() {
        let s = ShootingState { nodes: vec![[1.0, 0.0], [0.9, 0.1], [0.8, -0.2]], period: 4.0, c: 0.5 };
        let z = s.to_vec();
        assert_eq!(z.len(), 7);
        assert_eq!(ShootingState::from_vec(&z), s);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let p = ModelParams::roll_wave_default();
        let shooter = Shooter { params: p, closure: Closure::EndState { u_minus: 0.96 } };
        let eq = Equilibrium::balanced(&p, 0.83, 0.54);
        let state = ShootingState {
            nodes: vec![[eq.tau0 + 0.02, 0.0], [0.82, -0.01], [0.815, 0.012], [0.84, 0.01]],
            period: 3.8,
            c: 0.54,
        };
        let (_, jac) = shooter.evaluate(&state, true).unwrap();
        let jac = jac.unwrap();
        let z = state.to_vec();
        for k in 0..z.len() {
            let h = 1e-6;
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            let (rp, _) = shooter.evaluate(&ShootingState::from_vec(&zp), false).unwrap();
            let (rm, _) = shooter.evaluate(&ShootingState::from_vec(&zm), false).unwrap();
            for i in 0..rp.len() {
                let fd = (rp[i] - rm[i]) / (2.0 * h);
                assert!((fd - jac[(i, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "entry ({i},{k}): {fd} vs {}", jac[(i, k)]);
            }
        }
    }
}
