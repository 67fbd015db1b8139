//! Adaptive explicit Runge–Kutta integration (Dormand–Prince 8(5,3)).
//!
//! The integrator works on flat `f64` slices. Complex systems are handled by
//! splitting into real and imaginary parts. The right-hand side returns
//! `false` when the state has left its domain of definition (vacuum, flow
//! reversal, non-finite values); the step is then rejected and retried with a
//! smaller step, and a persistent violation is reported as
//! [`OdeFailure::Domain`].

use crate::dop853_tableau::{A, B, C, E3, E5};
use crate::error::Error;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OdeFailure {
    /// The right-hand side refused the state.
    Domain { at: f64 },
    StepUnderflow { at: f64 },
    MaxSteps { at: f64 },
}

impl OdeFailure {
    pub fn at(&self) -> f64 {
        match *self {
            OdeFailure::Domain { at } | OdeFailure::StepUnderflow { at } | OdeFailure::MaxSteps { at } => at,
        }
    }
}

impl From<OdeFailure> for Error {
    fn from(f: OdeFailure) -> Self {
        let reason = match f {
            OdeFailure::Domain { .. } => "state left the model domain",
            OdeFailure::StepUnderflow { .. } => "step size underflow",
            OdeFailure::MaxSteps { .. } => "maximum number of steps exceeded",
        };
        Error::Integration { at: f.at(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Dormand–Prince 8(5,3) with the combined 5th/3rd order error estimate.
#[derive(Debug, Clone, Copy)]
pub struct Dop853 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on |h|; `f64::INFINITY` for none.
    pub h_max: f64,
}

impl Default for Dop853 {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 1e-12, max_steps: 1_000_000, h_max: f64::INFINITY }
    }
}

impl Dop853 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    pub fn with_max_step(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    /// Advances `y` from `x0` to `x1` in place.
    pub fn integrate<F>(&self, mut f: F, x0: f64, y: &mut [f64], x1: f64) -> Result<OdeStats, OdeFailure>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        let mut stats = OdeStats::default();
        self.advance(&mut f, x0, y, x1, None, &mut stats)?;
        Ok(stats)
    }

    /// Advances `y` from `x0` through each point of the monotone list `xs`,
    /// calling `visit(i, y)` at every sample.
    pub fn integrate_sampled<F, V>(
        &self,
        mut f: F,
        x0: f64,
        y: &mut [f64],
        xs: &[f64],
        mut visit: V,
    ) -> Result<OdeStats, OdeFailure>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
        V: FnMut(usize, &[f64]),
    {
        let mut stats = OdeStats::default();
        let mut x = x0;
        let mut h_hint = None;
        for (i, &xi) in xs.iter().enumerate() {
            if xi != x {
                h_hint = Some(self.advance(&mut f, x, y, xi, h_hint, &mut stats)?);
                x = xi;
            }
            visit(i, y);
        }
        Ok(stats)
    }

    /// Core stepping loop; returns the last proposed step size.
    fn advance<F>(
        &self,
        f: &mut F,
        x0: f64,
        y: &mut [f64],
        x1: f64,
        h_hint: Option<f64>,
        stats: &mut OdeStats,
    ) -> Result<f64, OdeFailure>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        let n = y.len();
        let dir = if x1 >= x0 { 1.0 } else { -1.0 };
        if x1 == x0 {
            return Ok(h_hint.unwrap_or(0.0));
        }
        let mut k = vec![vec![0.0; n]; 13];
        let mut ytmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];

        stats.evaluations += 1;
        if !f(x0, y, &mut k[0]) {
            return Err(OdeFailure::Domain { at: x0 });
        }

        // Intervals below the step floor (rounding residue of sample grids)
        // are covered by one Euler step, which is exact to that precision.
        if (x1 - x0).abs() < 10.0 * f64::EPSILON * x0.abs().max(1.0) {
            let dx = x1 - x0;
            y.iter_mut().zip(&k[0]).for_each(|(yi, ki)| *yi += dx * ki);
            return Ok(h_hint.unwrap_or(0.0));
        }

        let mut h = match h_hint {
            Some(h) if h != 0.0 => h.abs(),
            _ => self.initial_step(f, x0, y, &k[0], dir, stats),
        };
        h = h.min(self.h_max).min((x1 - x0).abs());

        let mut x = x0;
        let mut steps = 0usize;
        let mut refused = false;
        while dir * (x1 - x) > 0.0 {
            steps += 1;
            if steps > self.max_steps {
                return Err(OdeFailure::MaxSteps { at: x });
            }
            let min_step = 10.0 * f64::EPSILON * x.abs().max(1.0);
            if h < min_step {
                return Err(if refused { OdeFailure::Domain { at: x } } else { OdeFailure::StepUnderflow { at: x } });
            }
            let mut hs = h * dir;
            let mut last = false;
            if dir * (x + hs - x1) >= 0.0 {
                hs = x1 - x;
                last = true;
            }

            let mut valid = true;
            for s in 1..12 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    ytmp[i] = y[i] + hs * acc;
                }
                stats.evaluations += 1;
                if !f(x + C[s] * hs, &ytmp, &mut k[s]) {
                    valid = false;
                    break;
                }
            }
            if valid {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (s, ks) in k.iter().enumerate().take(12) {
                        acc += B[s] * ks[i];
                    }
                    ynew[i] = y[i] + hs * acc;
                }
                stats.evaluations += 1;
                if !f(x + hs, &ynew, &mut k[12]) {
                    valid = false;
                }
            }
            refused = !valid;
            if !valid {
                stats.rejected += 1;
                h *= 0.25;
                continue;
            }

            let err = self.error_norm(&k, y, &ynew, hs.abs());
            if err.is_finite() && err <= 1.0 {
                stats.accepted += 1;
                x = if last { x1 } else { x + hs };
                y.copy_from_slice(&ynew);
                k.swap(0, 12);
                let factor = if err == 0.0 { MAX_FACTOR } else { (SAFETY * err.powf(-1.0 / 8.0)).min(MAX_FACTOR) };
                h = (h * factor).min(self.h_max);
            } else {
                stats.rejected += 1;
                let factor = if err.is_finite() { (SAFETY * err.powf(-1.0 / 8.0)).max(MIN_FACTOR) } else { MIN_FACTOR };
                h *= factor;
            }
        }
        Ok(h)
    }

    fn error_norm(&self, k: &[Vec<f64>], y: &[f64], ynew: &[f64], h: f64) -> f64 {
        let n = y.len();
        let mut e5 = 0.0;
        let mut e3 = 0.0;
        for i in 0..n {
            let scale = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
            let mut a5 = 0.0;
            let mut a3 = 0.0;
            for s in 0..13 {
                a5 += E5[s] * k[s][i];
                a3 += E3[s] * k[s][i];
            }
            e5 += (a5 / scale).powi(2);
            e3 += (a3 / scale).powi(2);
        }
        if e5 == 0.0 && e3 == 0.0 {
            return 0.0;
        }
        let denom = e5 + 0.01 * e3;
        h * e5 / (denom * n as f64).sqrt()
    }

    fn initial_step<F>(&self, f: &mut F, x0: f64, y0: &[f64], f0: &[f64], dir: f64, stats: &mut OdeStats) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> bool,
    {
        let n = y0.len();
        let scale: Vec<f64> = y0.iter().map(|v| self.atol + v.abs() * self.rtol).collect();
        let rms = |v: &dyn Fn(usize) -> f64| ((0..n).map(|i| v(i).powi(2)).sum::<f64>() / n as f64).sqrt();
        let d0 = rms(&|i| y0[i] / scale[i]);
        let d1 = rms(&|i| f0[i] / scale[i]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * dir * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        stats.evaluations += 1;
        if !f(x0 + h0 * dir, &y1, &mut f1) {
            return h0 * 1e-3;
        }
        let d2 = rms(&|i| (f1[i] - f0[i]) / scale[i]) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1)
    }
}
