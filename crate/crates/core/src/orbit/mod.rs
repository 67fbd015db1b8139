//! Periodic traveling waves: the scalar profile equation
//!
//! ```text
//! c² τ' + ((2F)⁻¹ τ⁻²)' = 1 − τ^{s+1}(q − cτ)^r − c ν (τ⁻² τ')'
//! ```
//!
//! written as a first-order system in `(τ, τ')`, its periodic orbits, and
//! their continuation in the period.

mod cache;
mod continuation;
mod shooting;

pub use cache::{read_index, read_profile, write_family, write_profile, IndexEntry};
pub use continuation::{continue_family, family_hopf_point, hopf_start, ContinuationOptions, FamilyPoint, OrbitFamily};
pub use shooting::{check_h2_rank, shooting_solve_fixed, solve_periodic, Constraint, H2Diagnostic, SolveOptions};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier;
use crate::model::{Equilibrium, ModelParams};
use crate::ode::Dop853;

/// How the integration constant `q` depends on the wavespeed along a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Closure {
    /// `q` held at a fixed value.
    FixedQ(f64),
    /// `q = u₋ + c τ₋` keeps the balanced state with velocity `u₋` an
    /// equilibrium for every `c`.
    EndState { u_minus: f64 },
}

impl Closure {
    pub fn q(&self, params: &ModelParams, c: f64) -> f64 {
        match *self {
            Closure::FixedQ(q) => q,
            Closure::EndState { u_minus } => u_minus + c * end_state_tau(params, u_minus),
        }
    }

    pub fn dq_dc(&self, params: &ModelParams) -> f64 {
        match *self {
            Closure::FixedQ(_) => 0.0,
            Closure::EndState { u_minus } => end_state_tau(params, u_minus),
        }
    }
}

/// Balanced specific volume for velocity `u₋`: `τ₋ = u₋^{−r/(s+1)}`.
pub fn end_state_tau(params: &ModelParams, u_minus: f64) -> f64 {
    u_minus.powf(-params.r / (params.s + 1.0))
}

/// Parameters `(X, c, q, b)` of a periodic orbit; `b = (τ, τ')(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub period: f64,
    pub c: f64,
    pub q: f64,
    pub b: [f64; 2],
}

/// The profile equation at fixed `(c, q)`.
#[derive(Debug, Clone, Copy)]
pub struct ProfileOde {
    pub params: ModelParams,
    pub c: f64,
    pub q: f64,
}

/// First partial derivatives of `τ'' = g(τ, τ'; c, q)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AccelGradient {
    pub g: f64,
    pub d_tau: f64,
    pub d_slope: f64,
    pub d_c: f64,
    pub d_q: f64,
}

impl ProfileOde {
    pub fn new(params: &ModelParams, c: f64, q: f64) -> Self {
        Self { params: *params, c, q }
    }

    #[inline]
    fn admissible(&self, tau: f64) -> bool {
        tau > 0.0 && self.q - self.c * tau > 0.0 && tau.is_finite()
    }

    /// `τ''` as a function of `(τ, τ')`; `None` outside the model domain.
    #[inline]
    pub fn accel(&self, tau: f64, slope: f64) -> Option<f64> {
        if !self.admissible(tau) || !slope.is_finite() {
            return None;
        }
        let p = &self.params;
        let u = self.q - self.c * tau;
        let forcing = 1.0 - p.friction(tau, u);
        let damping = self.c * self.c - 1.0 / (p.froude * tau.powi(3));
        Some((forcing - damping * slope) * tau * tau / (self.c * p.nu) + 2.0 * slope * slope / tau)
    }

    pub(crate) fn accel_gradient(&self, tau: f64, slope: f64) -> Option<AccelGradient> {
        if !self.admissible(tau) || !slope.is_finite() {
            return None;
        }
        let p = &self.params;
        let (c, nu) = (self.c, p.nu);
        let u = self.q - c * tau;
        let (f_tau, f_u) = p.friction_gradient(tau, u);
        let forcing = 1.0 - p.friction(tau, u);
        let forcing_tau = -f_tau + c * f_u;
        let forcing_c = tau * f_u;
        let forcing_q = -f_u;
        let damping = c * c - 1.0 / (p.froude * tau.powi(3));
        let damping_tau = 3.0 / (p.froude * tau.powi(4));
        let kappa = tau * tau / (c * nu);
        let bracket = forcing - damping * slope;
        Some(AccelGradient {
            g: bracket * kappa + 2.0 * slope * slope / tau,
            d_tau: (forcing_tau - damping_tau * slope) * kappa + bracket * 2.0 * tau / (c * nu)
                - 2.0 * slope * slope / (tau * tau),
            d_slope: -damping * kappa + 4.0 * slope / tau,
            d_c: (forcing_c - 2.0 * c * slope) * kappa - bracket * kappa / c,
            d_q: forcing_q * kappa,
        })
    }

    #[inline]
    pub fn rhs(&self, y: &[f64], dy: &mut [f64]) -> bool {
        match self.accel(y[0], y[1]) {
            Some(a) => {
                dy[0] = y[1];
                dy[1] = a;
                true
            }
            None => false,
        }
    }
}

pub(crate) fn default_integrator() -> Dop853 {
    Dop853::new(1e-11, 1e-12)
}

/// Integrates the profile equation from `spec.b` and samples `(τ, τ')` at
/// each point of the monotone list `xs` (starting at `x = 0`).
pub fn integrate_profile(spec: &OrbitSpec, params: &ModelParams, xs: &[f64]) -> Result<Vec<[f64; 2]>> {
    if spec.c == 0.0 {
        return integrate_zero_speed(spec, params, xs);
    }
    let ode = ProfileOde::new(params, spec.c, spec.q);
    let mut y = spec.b;
    let mut out = vec![[0.0; 2]; xs.len()];
    default_integrator()
        .integrate_sampled(|_, y, dy| ode.rhs(y, dy), 0.0, &mut y, xs, |i, y| out[i] = [y[0], y[1]])
        .map_err(Error::from)?;
    Ok(out)
}

/// At `c = 0` the profile equation degenerates to `τ' = F τ³ (τ^{s+1} q^r − 1)`.
fn integrate_zero_speed(spec: &OrbitSpec, params: &ModelParams, xs: &[f64]) -> Result<Vec<[f64; 2]>> {
    let p = *params;
    let q = spec.q;
    let slope = move |t: f64| p.froude * t.powi(3) * (t.powf(p.s + 1.0) * q.powf(p.r) - 1.0);
    let mut y = [spec.b[0]];
    let mut out = vec![[0.0; 2]; xs.len()];
    default_integrator()
        .integrate_sampled(
            |_, y, dy| {
                dy[0] = slope(y[0]);
                y[0] > 0.0 && dy[0].is_finite()
            },
            0.0,
            &mut y,
            xs,
            |i, y| out[i] = [y[0], slope(y[0])],
        )
        .map_err(Error::from)?;
    Ok(out)
}

/// A converged periodic orbit sampled on a uniform grid of `[0, X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicProfile {
    pub spec: OrbitSpec,
    pub params: ModelParams,
    /// Shooting nodes `(τ, τ')` at `x = iX/M`; node 0 equals `spec.b`.
    pub nodes: Vec<[f64; 2]>,
    pub tau: Vec<f64>,
    pub tau_x: Vec<f64>,
    pub u: Vec<f64>,
    /// Largest mismatch between consecutive shooting segments.
    pub periodicity_defect: f64,
}

impl PeriodicProfile {
    /// Samples a profile from its shooting nodes onto `n` grid points.
    pub fn from_nodes(spec: OrbitSpec, params: ModelParams, nodes: Vec<[f64; 2]>, n: usize) -> Result<Self> {
        let m = nodes.len();
        let ode = ProfileOde::new(&params, spec.c, spec.q);
        let integrator = default_integrator();
        let seg = spec.period / m as f64;
        let mut tau = vec![0.0; n];
        let mut tau_x = vec![0.0; n];
        let mut defect: f64 = 0.0;
        for (i, node) in nodes.iter().enumerate() {
            let x0 = i as f64 * seg;
            let x1 = (i + 1) as f64 * seg;
            let lo = (x0 * n as f64 / spec.period).ceil() as usize;
            let mut idx: Vec<usize> = (lo..n).take_while(|&j| (j as f64) * spec.period / (n as f64) < x1).collect();
            if i + 1 == m {
                idx.retain(|&j| j < n);
            }
            let mut xs: Vec<f64> = idx.iter().map(|&j| (j as f64 * spec.period / n as f64 - x0).max(0.0)).collect();
            xs.push(seg);
            let mut y = *node;
            let mut end = [0.0; 2];
            let count = idx.len();
            integrator
                .integrate_sampled(
                    |_, y, dy| ode.rhs(y, dy),
                    0.0,
                    &mut y,
                    &xs,
                    |k, y| {
                        if k < count {
                            tau[idx[k]] = y[0];
                            tau_x[idx[k]] = y[1];
                        } else {
                            end = [y[0], y[1]];
                        }
                    },
                )
                .map_err(|f| Error::Integration { at: x0 + f.at(), reason: "profile sampling".into() })?;
            let next = nodes[(i + 1) % m];
            defect = defect.max((end[0] - next[0]).abs()).max((end[1] - next[1]).abs());
        }
        let u = tau.iter().map(|t| spec.q - spec.c * t).collect();
        Ok(Self { spec, params, nodes, tau, tau_x, u, periodicity_defect: defect })
    }

    /// A constant state viewed as a (degenerate) periodic profile of period `period`.
    pub fn constant(eq: &Equilibrium, params: &ModelParams, period: f64, n: usize) -> Self {
        let spec = OrbitSpec { period, c: eq.c, q: eq.q, b: [eq.tau0, 0.0] };
        Self {
            spec,
            params: *params,
            nodes: vec![[eq.tau0, 0.0]; 4],
            tau: vec![eq.tau0; n],
            tau_x: vec![0.0; n],
            u: vec![eq.u0; n],
            periodicity_defect: 0.0,
        }
    }

    /// Same orbit on a grid of `n` points.
    pub fn resample(&self, n: usize) -> Result<Self> {
        Self::from_nodes(self.spec, self.params, self.nodes.clone(), n)
    }

    /// Samples with `n` doubled from `start` until the grid residual of the
    /// profile equation drops below `tol` or stops improving.
    pub fn with_resolved_grid(&self, start: usize, tol: f64, max_n: usize) -> Result<Self> {
        let mut current = self.resample(start)?;
        let mut residual = current.ode_residual();
        while residual > tol && current.len() * 2 <= max_n {
            let next = current.resample(current.len() * 2)?;
            let r = next.ode_residual();
            let improved = r < 0.5 * residual;
            current = next;
            residual = r;
            if !improved {
                break;
            }
        }
        Ok(current)
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.spec.period
    }

    pub fn dx(&self) -> f64 {
        self.spec.period / self.len() as f64
    }

    pub fn x(&self) -> Vec<f64> {
        (0..self.len()).map(|j| j as f64 * self.dx()).collect()
    }

    pub fn ode(&self) -> ProfileOde {
        ProfileOde::new(&self.params, self.spec.c, self.spec.q)
    }

    /// `ū_x = −c τ̄'`.
    pub fn u_x(&self) -> Vec<f64> {
        self.tau_x.iter().map(|t| -self.spec.c * t).collect()
    }

    /// `τ̄''` from the profile equation.
    pub fn tau_xx(&self) -> Vec<f64> {
        let ode = self.ode();
        self.tau
            .iter()
            .zip(&self.tau_x)
            .map(|(&t, &p)| ode.accel(t, p).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn amplitude(&self) -> f64 {
        let max = self.tau.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.tau.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }

    pub fn min_tau(&self) -> f64 {
        self.tau.iter().cloned().fold(f64::MAX, f64::min)
    }

    pub fn fourier_tau(&self) -> Vec<Complex64> {
        fourier::coefficients(&self.tau)
    }

    pub fn fourier_u(&self) -> Vec<Complex64> {
        fourier::coefficients(&self.u)
    }

    /// Max-norm residual of the first-order profile system on the grid,
    /// using spectral differentiation of the samples.
    pub fn ode_residual(&self) -> f64 {
        grid_residual(&self.ode(), &self.tau, &self.tau_x, self.spec.period)
    }

    /// The profile translated by `delta` (spectral interpolation).
    pub fn shifted(&self, delta: f64) -> (Vec<f64>, Vec<f64>) {
        (
            fourier::shift(&self.tau, self.spec.period, delta),
            fourier::shift(&self.tau_x, self.spec.period, delta),
        )
    }

    /// `(τ, τ')` at an arbitrary `x`, integrated from the nearest node.
    pub fn state_at(&self, x: f64) -> Result<[f64; 2]> {
        let period = self.spec.period;
        let x = x.rem_euclid(period);
        let m = self.nodes.len();
        let seg = period / m as f64;
        let i = ((x / seg).floor() as usize).min(m - 1);
        let mut y = self.nodes[i];
        let ode = self.ode();
        default_integrator()
            .integrate(|_, y, dy| ode.rhs(y, dy), 0.0, &mut y, x - i as f64 * seg)
            .map_err(Error::from)?;
        Ok(y)
    }
}

pub(crate) fn grid_residual(ode: &ProfileOde, tau: &[f64], tau_x: &[f64], period: f64) -> f64 {
    let d_tau = fourier::derivative(tau, period);
    let d_slope = fourier::derivative(tau_x, period);
    let mut worst: f64 = 0.0;
    for j in 0..tau.len() {
        let accel = ode.accel(tau[j], tau_x[j]).unwrap_or(f64::INFINITY);
        worst = worst.max((d_tau[j] - tau_x[j]).abs()).max((d_slope[j] - accel).abs());
    }
    worst
}

/// Outcome of the pointwise check `ν ū_x < F⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCondition {
    pub holds: bool,
    /// `min_x (F⁻¹ − ν ū_x)`.
    pub margin: f64,
}

pub fn derivative_condition(profile: &PeriodicProfile) -> DerivativeCondition {
    derivative_condition_samples(&profile.params, &profile.u_x())
}

pub fn derivative_condition_samples(params: &ModelParams, u_x: &[f64]) -> DerivativeCondition {
    let margin = u_x
        .iter()
        .map(|ux| 1.0 / params.froude - params.nu * ux)
        .fold(f64::INFINITY, f64::min);
    DerivativeCondition { holds: margin > 0.0, margin }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::find_equilibria;

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = ModelParams::roll_wave_default();
        let eq = Equilibrium::balanced(&p, 0.9, 0.5);
        let spec = OrbitSpec { period: 5.0, c: eq.c, q: eq.q, b: [eq.tau0, 0.0] };
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 * 0.5).collect();
        for y in integrate_profile(&spec, &p, &xs).unwrap() {
            assert!((y[0] - eq.tau0).abs() < 1e-13 && y[1].abs() < 1e-13);
        }
    }

    #[test]
    fn zero_speed_trajectory_is_monotone() {
        let p = ModelParams::roll_wave_default();
        let q = 1.0;
        let eq = find_equilibria(&p, q, 0.0)[0];
        for start in [eq.tau0 * 0.95, eq.tau0 * 0.999] {
            let spec = OrbitSpec { period: 1.0, c: 0.0, q, b: [start, 0.0] };
            let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.02).collect();
            let ys = integrate_profile(&spec, &p, &xs).unwrap();
            assert!(ys.windows(2).all(|w| w[1][0] < w[0][0]), "trajectory must decrease monotonically");
        }
    }

    #[test]
    fn vacuum_exit_is_reported_with_location() {
        let p = ModelParams::roll_wave_default();
        // Far from any orbit: the trajectory leaves the admissible strip.
        let spec = OrbitSpec { period: 1.0, c: 0.5, q: 1.5, b: [0.3, -5.0] };
        let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        match integrate_profile(&spec, &p, &xs) {
            Err(Error::Integration { at, .. }) => assert!(at > 0.0 && at < 10.0),
            other => panic!("expected an integration failure, got {other:?}"),
        }
    }

    #[test]
    fn accel_gradient_matches_finite_differences() {
        let p = ModelParams::new(6.0, 0.1, 1.5, 0.5).unwrap();
        let ode = ProfileOde::new(&p, 0.55, 1.5);
        let (t, s) = (0.9, 0.2);
        let g = ode.accel_gradient(t, s).unwrap();
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        assert!((g.g - ode.accel(t, s).unwrap()).abs() < 1e-14);
        assert!((g.d_tau - fd(&|e| ode.accel(t + e, s).unwrap())).abs() < 1e-6);
        assert!((g.d_slope - fd(&|e| ode.accel(t, s + e).unwrap())).abs() < 1e-6);
        assert!((g.d_c - fd(&|e| ProfileOde::new(&p, 0.55 + e, 1.5).accel(t, s).unwrap())).abs() < 1e-6);
        assert!((g.d_q - fd(&|e| ProfileOde::new(&p, 0.55, 1.5 + e).accel(t, s).unwrap())).abs() < 1e-6);
    }

    #[test]
    fn derivative_condition_cases() {
        let p = ModelParams::roll_wave_default();
        let flat = derivative_condition_samples(&p, &[0.0; 8]);
        assert!(flat.holds && (flat.margin - 1.0 / 6.0).abs() < 1e-15);
        let steep = derivative_condition_samples(&p, &[0.0, 1.0, 2.0 / (6.0 * 0.1)]);
        assert!(!steep.holds);
    }
}
