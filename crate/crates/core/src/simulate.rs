//! Method-of-lines evolution of the Lagrangian system on a periodic domain.
//!
//! Fields live on a uniform collocated grid `x_j = j Δx`. Hyperbolic terms use
//! fourth-order central differences; the viscous term `ν(τ⁻²u_x)_x` is formed
//! from fourth-order face fluxes and differenced with the matching fourth-order
//! stencil, which damps the grid-scale mode of `u`. Every spatial operator has
//! weights summing to zero, so `mean(τ)` is conserved up to round-off. Time
//! stepping is the three-stage strong-stability-preserving Runge–Kutta scheme.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::{leading_mode, Window};
use crate::error::{Error, Result};
use crate::fourier;
use crate::model::ModelParams;
use crate::orbit::PeriodicProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    Lab,
    /// Coordinates `x − c t` moving with the wave.
    CoMoving { speed: f64 },
}

impl Frame {
    pub fn speed(&self) -> f64 {
        match *self {
            Frame::Lab => 0.0,
            Frame::CoMoving { speed } => speed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    pub length: f64,
    pub cells: usize,
    /// Fixed step; `None` picks the largest step allowed by `cfl` and
    /// `diffusion_number` at every step.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub diffusion_number: f64,
    pub end_time: f64,
    pub frame: Frame,
}

impl SimConfig {
    pub fn new(params: ModelParams, length: f64, cells: usize, frame: Frame) -> Self {
        Self { params, length, cells, dt: None, cfl: 0.4, diffusion_number: 0.35, end_time: 0.0, frame }
    }

    pub fn dx(&self) -> f64 {
        self.length / self.cells as f64
    }

    pub fn x(&self) -> Vec<f64> {
        (0..self.cells).map(|j| j as f64 * self.dx()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        if !(self.length > 0.0) {
            return bad("length", "must be positive");
        }
        if self.cells < 8 {
            return bad("cells", "need at least 8 cells");
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.45) {
            return bad("cfl", "must lie in (0, 0.45]");
        }
        if !(self.diffusion_number > 0.0 && self.diffusion_number <= 0.4) {
            return bad("diffusion_number", "must lie in (0, 0.4]");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return bad("dt", "must be positive");
            }
        }
        Ok(())
    }

    /// Largest step satisfying both the advective and diffusive limits.
    pub fn stable_dt(&self, state: &SimState) -> f64 {
        let p = &self.params;
        let tau_min = state.min_tau();
        let speed = self.frame.speed().abs() + p.sound_speed(tau_min);
        let dx = self.dx();
        let advective = self.cfl * dx / speed;
        let diffusive = self.diffusion_number * dx * dx * tau_min * tau_min / p.nu;
        advective.min(diffusive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub tau: Vec<f64>,
    pub u: Vec<f64>,
}

impl SimState {
    pub fn mean_tau(&self) -> f64 {
        self.tau.iter().sum::<f64>() / self.tau.len() as f64
    }

    pub fn mean_u(&self) -> f64 {
        self.u.iter().sum::<f64>() / self.u.len() as f64
    }

    pub fn min_tau(&self) -> f64 {
        self.tau.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Time stepper with preallocated stage buffers.
pub struct Stepper {
    cfg: SimConfig,
    k_tau: Vec<f64>,
    k_u: Vec<f64>,
    s_tau: Vec<f64>,
    s_u: Vec<f64>,
    pad: [Vec<f64>; 3],
    face: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.cells;
        Ok(Self {
            cfg,
            k_tau: vec![0.0; n],
            k_u: vec![0.0; n],
            s_tau: vec![0.0; n],
            s_u: vec![0.0; n],
            pad: [vec![0.0; n + 6], vec![0.0; n + 6], vec![0.0; n + 6]],
            face: vec![0.0; n + 6],
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Spatial operator; `false` on vacuum. `pad` holds three work arrays
    /// with three ghost cells on each side, `face` has the same length.
    fn rhs(
        cfg: &SimConfig,
        tau: &[f64],
        u: &[f64],
        d_tau: &mut [f64],
        d_u: &mut [f64],
        pad: &mut [Vec<f64>; 3],
        face: &mut [f64],
    ) -> bool {
        let n = tau.len();
        let h = cfg.dx();
        let p = &cfg.params;
        let c = cfg.frame.speed();
        let quadratic_friction = p.r == 2.0 && p.s == 0.0;
        if !tau.iter().chain(u).all(|v| v.is_finite()) || !tau.iter().all(|t| *t > 0.0) {
            return false;
        }
        // Index j of the padded arrays is grid point j − 3.
        let [tp, up, pp] = pad;
        for j in 0..n + 6 {
            let k = (j + n - 3) % n;
            tp[j] = tau[k];
            up[j] = u[k];
            pp[j] = p.pressure(tau[k]);
        }
        // face[j] is the viscous flux between padded points j and j + 1.
        for j in 1..n + 4 {
            let (a, b, cc, d) = (j - 1, j, j + 1, j + 2);
            let tf = (-tp[a] + 9.0 * tp[b] + 9.0 * tp[cc] - tp[d]) / 16.0;
            let ux = (up[a] - 27.0 * up[b] + 27.0 * up[cc] - up[d]) / (24.0 * h);
            face[j] = p.nu * ux / (tf * tf);
        }
        let inv12 = 1.0 / (12.0 * h);
        let inv24 = 1.0 / (24.0 * h);
        for k in 0..n {
            let j = k + 3;
            let (t, v) = (tau[k], u[k]);
            let friction = if quadratic_friction {
                t * v * v.abs()
            } else {
                t.powf(p.s + 1.0) * v * v.abs().powf(p.r - 1.0)
            };
            let d1 = |f: &[f64]| (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) * inv12;
            let visc = (face[j - 2] - 27.0 * face[j - 1] + 27.0 * face[j] - face[j + 1]) * inv24;
            let u_x = d1(up);
            d_tau[k] = u_x + c * d1(tp);
            d_u[k] = c * u_x - d1(pp) + 1.0 - friction + visc;
        }
        true
    }

    fn stage(&mut self, from_tau: &[f64], from_u: &[f64], t: f64) -> Result<()> {
        if Self::rhs(&self.cfg, from_tau, from_u, &mut self.k_tau, &mut self.k_u, &mut self.pad, &mut self.face) {
            Ok(())
        } else {
            Err(Error::Simulation { t, reason: "vacuum (τ ≤ 0) or non-finite state".into() })
        }
    }

    /// One SSP-RK3 step of size `dt`.
    pub fn step_by(&mut self, state: &mut SimState, dt: f64) -> Result<()> {
        let mut st = std::mem::take(&mut self.s_tau);
        let mut su = std::mem::take(&mut self.s_u);
        let out = self.stages(state, dt, &mut st, &mut su);
        self.s_tau = st;
        self.s_u = su;
        out?;
        state.t += dt;
        if !(state.min_tau() > 0.0) {
            return Err(Error::Simulation { t: state.t, reason: "vacuum (τ ≤ 0)".into() });
        }
        Ok(())
    }

    fn stages(&mut self, state: &mut SimState, dt: f64, st: &mut [f64], su: &mut [f64]) -> Result<()> {
        let n = state.tau.len();
        let t = state.t;
        self.stage(&state.tau, &state.u, t)?;
        for j in 0..n {
            st[j] = state.tau[j] + dt * self.k_tau[j];
            su[j] = state.u[j] + dt * self.k_u[j];
        }
        self.stage(st, su, t + dt)?;
        for j in 0..n {
            st[j] = 0.75 * state.tau[j] + 0.25 * (st[j] + dt * self.k_tau[j]);
            su[j] = 0.75 * state.u[j] + 0.25 * (su[j] + dt * self.k_u[j]);
        }
        self.stage(st, su, t + 0.5 * dt)?;
        for j in 0..n {
            state.tau[j] = (state.tau[j] + 2.0 * (st[j] + dt * self.k_tau[j])) / 3.0;
            state.u[j] = (state.u[j] + 2.0 * (su[j] + dt * self.k_u[j])) / 3.0;
        }
        Ok(())
    }

    /// The step the configuration asks for at `state`; errors when a fixed
    /// step violates the stability limits.
    pub fn next_dt(&self, state: &SimState) -> Result<f64> {
        let limit = self.cfg.stable_dt(state);
        match self.cfg.dt {
            Some(dt) if dt > limit * (1.0 + 1e-12) => Err(Error::Simulation {
                t: state.t,
                reason: format!("time step {dt:e} violates the stability limit {limit:e}"),
            }),
            Some(dt) => Ok(dt),
            None => Ok(limit),
        }
    }

    /// Steps until `state.t == t_end` exactly (the last step is shortened).
    pub fn advance_to(&mut self, state: &mut SimState, t_end: f64) -> Result<()> {
        while state.t < t_end {
            let dt = self.next_dt(state)?;
            let remaining = t_end - state.t;
            let dt = if remaining <= dt * (1.0 + 1e-9) { remaining } else { dt };
            self.step_by(state, dt)?;
            if remaining <= dt {
                state.t = t_end;
            }
        }
        Ok(())
    }
}

/// One time step of the configured size (or the largest stable one).
pub fn step(state: &SimState, cfg: &SimConfig) -> Result<SimState> {
    let mut stepper = Stepper::new(cfg.clone())?;
    let dt = stepper.next_dt(state)?;
    let mut next = state.clone();
    stepper.step_by(&mut next, dt)?;
    Ok(next)
}

/// Runs to `cfg.end_time`, calling `observe` at `t = 0` and at every
/// multiple of `interval`.
pub fn evolve<F>(initial: SimState, cfg: &SimConfig, interval: f64, mut observe: F) -> Result<SimState>
where
    F: FnMut(&SimState) -> bool,
{
    let mut stepper = Stepper::new(cfg.clone())?;
    let mut state = initial;
    if !observe(&state) {
        return Ok(state);
    }
    let mut k = 1;
    loop {
        let target = (k as f64 * interval).min(cfg.end_time);
        stepper.advance_to(&mut state, target)?;
        if !observe(&state) || target >= cfg.end_time {
            return Ok(state);
        }
        k += 1;
    }
}

/// A periodic wave tiled over `copies` periods, sampled on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub period: f64,
    pub speed: f64,
    pub copies: usize,
    pub tau: Vec<f64>,
    pub u: Vec<f64>,
    pub tau_x: Vec<f64>,
    /// Cells of the whole domain where `|τ̄'|` exceeds 10% of its maximum.
    pub gradient_mask: Vec<bool>,
}

impl Reference {
    pub fn new(profile: &PeriodicProfile, cells_per_period: usize, copies: usize) -> Result<Self> {
        let sampled = if profile.len() == cells_per_period { profile.clone() } else { profile.resample(cells_per_period)? };
        let peak = sampled.tau_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mask: Vec<bool> = sampled.tau_x.iter().map(|v| v.abs() > 0.1 * peak).collect();
        Ok(Self {
            period: profile.period(),
            speed: profile.spec.c,
            copies,
            tau: sampled.tau.clone(),
            u: sampled.u.clone(),
            tau_x: sampled.tau_x.clone(),
            gradient_mask: mask.repeat(copies),
        })
    }

    pub fn cells(&self) -> usize {
        self.tau.len() * self.copies
    }

    pub fn length(&self) -> f64 {
        self.period * self.copies as f64
    }

    pub fn dx(&self) -> f64 {
        self.period / self.tau.len() as f64
    }

    /// Co-moving configuration on the tiled domain.
    pub fn config(&self, params: ModelParams, end_time: f64) -> SimConfig {
        let mut cfg = SimConfig::new(params, self.length(), self.cells(), Frame::CoMoving { speed: self.speed });
        cfg.end_time = end_time;
        cfg
    }

    pub fn state(&self) -> SimState {
        SimState { t: 0.0, tau: self.tau.repeat(self.copies), u: self.u.repeat(self.copies) }
    }

    fn shifted(&self, delta: f64) -> (Vec<f64>, Vec<f64>) {
        (fourier::shift(&self.tau, self.period, delta), fourier::shift(&self.u, self.period, delta))
    }

    fn linf_to(&self, state: &SimState, tau: &[f64], u: &[f64]) -> f64 {
        let n = tau.len();
        state
            .tau
            .iter()
            .zip(&state.u)
            .enumerate()
            .map(|(j, (t, v))| (t - tau[j % n]).abs().max((v - u[j % n]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn linf_raw(&self, state: &SimState) -> f64 {
        self.linf_to(state, &self.tau, &self.u)
    }

    /// `min_δ ‖U − Ū(· − δ)‖_∞` with `δ` over one period; returns the
    /// distance and the optimal shift.
    pub fn linf_shift_optimized(&self, state: &SimState) -> (f64, f64) {
        let dist = |d: f64| {
            let (t, u) = self.shifted(d);
            self.linf_to(state, &t, &u)
        };
        let d = minimize_periodic(dist, self.period);
        (dist(d), d)
    }

    fn l2_to(&self, state: &SimState, tau: &[f64], u: &[f64]) -> f64 {
        let n = tau.len();
        state.tau.iter().zip(&state.u).enumerate().map(|(j, (t, v))| (t - tau[j % n]).powi(2) + (v - u[j % n]).powi(2)).sum()
    }

    /// Shift minimizing the L² distance to the translated reference.
    pub fn l2_optimal_shift(&self, state: &SimState) -> f64 {
        let dist = |d: f64| {
            let (t, u) = self.shifted(d);
            self.l2_to(state, &t, &u)
        };
        minimize_periodic(dist, self.period)
    }

    /// Perturbation energy `∫ (τ − τ̄)² + (u − ū)²` against the L²-closest
    /// translate of the reference, split by where that translate has
    /// `|τ̄'|` above 10% of its maximum. Translation is neutral, so it is
    /// removed before the perturbation is attributed to either region.
    pub fn energies(&self, state: &SimState) -> (f64, f64) {
        let delta = self.l2_optimal_shift(state);
        let (tau, u) = self.shifted(delta);
        let slope = fourier::shift(&self.tau_x, self.period, delta);
        let peak = slope.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let n = tau.len();
        let dx = self.dx();
        let (mut grad, mut flat) = (0.0, 0.0);
        for j in 0..state.tau.len() {
            let e = ((state.tau[j] - tau[j % n]).powi(2) + (state.u[j] - u[j % n]).powi(2)) * dx;
            if slope[j % n].abs() > 0.1 * peak {
                grad += e;
            } else {
                flat += e;
            }
        }
        (grad, flat)
    }

    pub fn diagnostics(&self, state: &SimState) -> Diagnostics {
        let (energy_gradient_region, energy_constant_region) = self.energies(state);
        Diagnostics {
            t: state.t,
            linf_raw: self.linf_raw(state),
            linf_shift_opt: self.linf_shift_optimized(state).0,
            energy_gradient_region,
            energy_constant_region,
            mean_tau: state.mean_tau(),
        }
    }
}

/// Minimizer of `f` over one period: a 64-point scan then golden-section
/// refinement in the bracketing cells.
fn minimize_periodic<F: Fn(f64) -> f64>(f: F, period: f64) -> f64 {
    let scan = 64;
    let h = period / scan as f64;
    let (mut best_d, mut best) = (0.0, f(0.0));
    for i in 1..scan {
        let d = i as f64 * h - if i > scan / 2 { period } else { 0.0 };
        let v = f(d);
        if v < best {
            best = v;
            best_d = d;
        }
    }
    let (mut a, mut b) = (best_d - h, best_d + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let (d_opt, f_opt) = if fc < fd { (c, fc) } else { (d, fd) };
    if f_opt < best { d_opt } else { best_d }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub linf_raw: f64,
    pub linf_shift_opt: f64,
    pub energy_gradient_region: f64,
    pub energy_constant_region: f64,
    pub mean_tau: f64,
}

pub fn diagnostics_csv(rows: &[Diagnostics]) -> String {
    let mut out = String::from("t,linf_raw,linf_shift_opt,energy_gradient_region,energy_constant_region,mean_tau\n");
    for d in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            d.t, d.linf_raw, d.linf_shift_opt, d.energy_gradient_region, d.energy_constant_region, d.mean_tau
        )
        .unwrap();
    }
    out
}

/// Columns `x tau u h` with `h = 1/τ`.
pub fn snapshot_text(state: &SimState, dx: f64) -> String {
    let mut out = format!("# t = {:.16e}\n# columns: x tau u h\n", state.t);
    for (j, (t, u)) in state.tau.iter().zip(&state.u).enumerate() {
        writeln!(out, "{:.16e} {:.16e} {:.16e} {:.16e}", j as f64 * dx, t, u, 1.0 / t).unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeVerdict {
    Bounded,
    Growing,
    Inconclusive,
}

/// Localized perturbation profiles, both with unit peak height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BumpShape {
    /// `exp(−(x/w)²)`; carries net mass.
    Gaussian,
    /// `√(2e) (x/w) exp(−(x/w)²)`; zero mean.
    Dipole,
}

impl BumpShape {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            BumpShape::Gaussian => (-s * s).exp(),
            BumpShape::Dipole => (2.0 * std::f64::consts::E).sqrt() * s * (-s * s).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub epsilon: f64,
    pub horizon: f64,
    pub copies: usize,
    pub cells_per_period: usize,
    pub output_interval: f64,
    /// Width `w` of the bump in Lagrangian length units.
    pub width: f64,
    pub shape: BumpShape,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { epsilon: 1e-3, horizon: 200.0, copies: 8, cells_per_period: 128, output_interval: 1.0, width: 1.0, shape: BumpShape::Gaussian }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub verdict: ProbeVerdict,
    pub epsilon: f64,
    pub max_shift_optimized: f64,
    pub history: Vec<Diagnostics>,
}

/// Evolves the tiled wave plus `ε` times a localized bump in both fields.
/// The run stops early once the shift-optimized distance passes `100 ε`.
pub fn run_stability_probe(profile: &PeriodicProfile, opts: &ProbeOptions) -> Result<ProbeReport> {
    if opts.copies < 8 {
        return Err(Error::InvalidParameter { name: "copies", reason: "need at least 8 periods".into() });
    }
    let reference = Reference::new(profile, opts.cells_per_period, opts.copies)?;
    let cfg = reference.config(profile.params, opts.horizon);
    let mut state = reference.state();
    let (len, width) = (reference.length(), opts.width);
    for (j, x) in cfg.x().iter().enumerate() {
        let g = opts.epsilon * opts.shape.eval((x - 0.5 * len) / width);
        state.tau[j] += g;
        state.u[j] += g;
    }
    let eps = opts.epsilon;
    let mut history = Vec::new();
    evolve(state, &cfg, opts.output_interval, |s| {
        let d = reference.diagnostics(s);
        history.push(d);
        d.linf_shift_opt <= 100.0 * eps
    })?;
    let max_shift_optimized = history.iter().map(|d| d.linf_shift_opt).fold(0.0, f64::max);
    let verdict = if max_shift_optimized > 100.0 * eps {
        ProbeVerdict::Growing
    } else if max_shift_optimized < 10.0 * eps {
        ProbeVerdict::Bounded
    } else {
        ProbeVerdict::Inconclusive
    };
    Ok(ProbeReport { verdict, epsilon: eps, max_shift_optimized, history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub epsilon: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub cells_per_period: usize,
    pub n_modes: usize,
    pub output_interval: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { epsilon: 1e-6, t_start: 5.0, t_end: 20.0, cells_per_period: 128, n_modes: 32, output_interval: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Floquet exponent realized on the tiled domain.
    pub xi: f64,
    pub copies: usize,
    /// Hill eigenvalue used as the initial mode.
    pub lambda: Complex64,
    /// Least-squares slope of `log ‖U_ε − U₀‖₂` over `[t_start, t_end]`.
    pub measured_rate: f64,
    pub history: Vec<(f64, f64)>,
}

/// Picks `m ∈ [8, 16]` periods and `j` so that `2πj/(mX)` is closest to `xi_target`.
pub fn tiling_for(period: f64, xi_target: f64) -> (usize, usize) {
    let target = xi_target.abs() * period / (2.0 * std::f64::consts::PI);
    (8..=16)
        .map(|m| (m, ((target * m as f64).round() as usize).max(1)))
        .min_by(|a, b| {
            let da = (a.1 as f64 / a.0 as f64 - target).abs();
            let db = (b.1 as f64 / b.0 as f64 - target).abs();
            da.total_cmp(&db)
        })
        .expect("non-empty range")
}

/// Seeds the leading Hill eigenmode at the resolvable exponent nearest
/// `xi_target` with amplitude `ε` and measures its growth against an
/// unperturbed run on the same grid.
pub fn linear_rate_check(profile: &PeriodicProfile, xi_target: f64, opts: &RateOptions) -> Result<RateReport> {
    let (copies, j) = tiling_for(profile.period(), xi_target);
    let xi = 2.0 * std::f64::consts::PI * j as f64 / (copies as f64 * profile.period());
    let mode = leading_mode(profile, xi, opts.n_modes, &Window::default())?;
    let reference = Reference::new(profile, opts.cells_per_period, copies)?;
    let cfg = reference.config(profile.params, opts.t_end);
    let base = reference.state();
    let mut seeded = base.clone();
    let xs = cfg.x();
    let values: Vec<[Complex64; 2]> = xs.iter().map(|&x| mode.evaluate(x)).collect();
    let scale = values.iter().map(|v| v[0].norm().max(v[1].norm())).fold(0.0, f64::max);
    for (k, v) in values.iter().enumerate() {
        seeded.tau[k] += opts.epsilon * v[0].re / scale;
        seeded.u[k] += opts.epsilon * v[1].re / scale;
    }
    let mut baseline = Vec::new();
    evolve(base, &cfg, opts.output_interval, |s| {
        baseline.push(s.clone());
        true
    })?;
    let dx = cfg.dx();
    let mut history = Vec::new();
    let mut k = 0;
    evolve(seeded, &cfg, opts.output_interval, |s| {
        let b = &baseline[k];
        let norm = (s.tau.iter().zip(&b.tau).map(|(a, c)| (a - c).powi(2)).sum::<f64>()
            + s.u.iter().zip(&b.u).map(|(a, c)| (a - c).powi(2)).sum::<f64>())
        .sqrt()
            * dx.sqrt();
        history.push((s.t, norm));
        k += 1;
        true
    })?;
    let window: Vec<(f64, f64)> =
        history.iter().filter(|(t, _)| *t >= opts.t_start && *t <= opts.t_end).map(|(t, n)| (*t, n.ln())).collect();
    let measured_rate = slope(&window);
    Ok(RateReport { xi, copies, lambda: mode.lambda, measured_rate, history })
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    points.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / points.iter().map(|(x, _)| (x - mx).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastabilityOptions {
    pub cells_per_period: usize,
    pub amplitude: f64,
    /// Square-wave width; defaults to the width of the gradient-active pulse.
    pub width: Option<f64>,
    /// Edge smoothing length of the square wave; defaults to 2% of its width.
    pub edge: Option<f64>,
    /// Defaults to the wrap-around cutoff.
    pub end_time: Option<f64>,
    pub output_interval: f64,
    pub snapshot_times: Vec<f64>,
}

impl Default for MetastabilityOptions {
    fn default() -> Self {
        Self {
            cells_per_period: 1024,
            amplitude: 0.05,
            width: None,
            edge: None,
            end_time: None,
            output_interval: 0.25,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetastabilityRun {
    /// Center and width of the gradient-active pulse.
    pub pulse_center: f64,
    pub pulse_width: f64,
    /// Fastest constant-state characteristic speed in the co-moving frame.
    pub convection_speed: f64,
    /// Time at which perturbation leaving the pulse could re-enter it.
    pub cutoff: f64,
    pub dx: f64,
    pub diagnostics: Vec<Diagnostics>,
    pub snapshots: Vec<SimState>,
}

/// Shortest periodic arc covering the `true` cells: `(start index, cell count)`.
fn covering_arc(mask: &[bool]) -> (usize, usize) {
    let n = mask.len();
    // The arc is the complement of the longest run of `false` cells.
    let (mut best_start, mut best_len) = (0, 0);
    let mut j = 0;
    while j < 2 * n {
        if !mask[j % n] {
            let s = j;
            while j < 2 * n && !mask[j % n] && j - s < n {
                j += 1;
            }
            if j - s > best_len {
                best_len = j - s;
                best_start = s;
            }
        } else {
            j += 1;
        }
    }
    ((best_start + best_len) % n, n - best_len)
}

/// Square-wave perturbation of `τ` on one period of the largest computed
/// wave, evolved in the co-moving frame until wrap-around.
pub fn run_metastability(profile: &PeriodicProfile, opts: &MetastabilityOptions) -> Result<MetastabilityRun> {
    let reference = Reference::new(profile, opts.cells_per_period, 1)?;
    let x = profile.period();
    let dx = reference.dx();
    let n = reference.tau.len();
    let (start, count) = covering_arc(&reference.gradient_mask);
    let pulse_width = count as f64 * dx;
    let pulse_center = (start as f64 + 0.5 * count as f64) * dx % x;

    // Perturbations leave the pulse at its left edge and travel left through
    // the constant stretch; they re-enter the pulse from the right once they
    // have covered X − width.
    // The constant state is read off half a period away from the pulse.
    let far = ((pulse_center + 0.5 * x) / dx).round() as usize % n;
    let flat_tau = reference.tau[far];
    let convection_speed = profile.spec.c.abs() + profile.params.sound_speed(flat_tau);
    let cutoff = (x - pulse_width) / convection_speed;
    let end_time = opts.end_time.unwrap_or(cutoff);

    let width = opts.width.unwrap_or(pulse_width);
    let edge = opts.edge.unwrap_or(0.02 * width);
    let cfg = reference.config(profile.params, end_time);
    let mut state = reference.state();
    for (j, xj) in cfg.x().iter().enumerate() {
        let d = (xj - pulse_center + 0.5 * x).rem_euclid(x) - 0.5 * x;
        let box_ = 0.5 * (((d + 0.5 * width) / edge).tanh() - ((d - 0.5 * width) / edge).tanh());
        state.tau[j] += opts.amplitude * box_;
    }

    let mut diagnostics = Vec::new();
    let mut snapshots = Vec::new();
    let mut pending: Vec<f64> = opts.snapshot_times.iter().copied().filter(|t| *t <= end_time).collect();
    pending.sort_by(f64::total_cmp);
    let mut stepper = Stepper::new(cfg.clone())?;
    let mut next_output: f64 = 0.0;
    loop {
        let next_snap = pending.first().copied().unwrap_or(f64::INFINITY);
        let target = next_output.min(next_snap).min(end_time);
        stepper.advance_to(&mut state, target)?;
        if (state.t - next_output).abs() <= 1e-12 * end_time.max(1.0) {
            diagnostics.push(reference.diagnostics(&state));
            next_output += opts.output_interval;
        }
        if (state.t - next_snap).abs() <= 1e-12 * end_time.max(1.0) {
            snapshots.push(state.clone());
            pending.remove(0);
        }
        if state.t >= end_time {
            if diagnostics.last().is_none_or(|d| d.t < state.t) {
                diagnostics.push(reference.diagnostics(&state));
            }
            break;
        }
    }
    Ok(MetastabilityRun { pulse_center, pulse_width, convection_speed, cutoff, dx, diagnostics, snapshots })
}

/// True when the series is non-increasing after its maximum, up to a
/// relative slack `tol` between consecutive samples.
pub fn decays_after_peak(values: &[f64], tol: f64) -> bool {
    let Some((peak, _)) = values.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
        return false;
    };
    values[peak..].windows(2).all(|w| w[1] <= w[0] * (1.0 + tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Equilibrium;

    #[test]
    fn equilibrium_is_steady() {
        let p = ModelParams::roll_wave_default();
        let eq = Equilibrium::balanced(&p, 0.9, 0.5);
        let cfg = SimConfig::new(p, 5.0, 64, Frame::CoMoving { speed: 0.5 });
        let mut state = SimState { t: 0.0, tau: vec![eq.tau0; 64], u: vec![eq.u0; 64] };
        let mut stepper = Stepper::new(cfg).unwrap();
        for _ in 0..10 {
            let dt = stepper.next_dt(&state).unwrap();
            stepper.step_by(&mut state, dt).unwrap();
            for (t, u) in state.tau.iter().zip(&state.u) {
                assert!((t - eq.tau0).abs() < 1e-12 && (u - eq.u0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covering_arc_wraps() {
        let mask = [true, false, false, false, true, true];
        assert_eq!(covering_arc(&mask), (4, 3));
        let mask = [false, true, true, false, false, false];
        assert_eq!(covering_arc(&mask), (1, 2));
    }

    #[test]
    fn decay_after_peak() {
        assert!(decays_after_peak(&[1.0, 3.0, 2.0, 1.0], 0.0));
        assert!(!decays_after_peak(&[1.0, 3.0, 2.0, 2.5], 0.0));
    }

    #[test]
    fn tiling_hits_representable_exponents() {
        let (m, j) = tiling_for(4.0, 2.0 * std::f64::consts::PI * 0.25 / 4.0);
        assert_eq!(j as f64 / m as f64, 0.25);
    }

    #[test]
    fn oversized_fixed_step_is_rejected() {
        let p = ModelParams::roll_wave_default();
        let mut cfg = SimConfig::new(p, 1.0, 64, Frame::Lab);
        cfg.dt = Some(1.0);
        let state = SimState { t: 0.0, tau: vec![1.0; 64], u: vec![1.0; 64] };
        assert!(matches!(step(&state, &cfg), Err(Error::Simulation { .. })));
    }
}
