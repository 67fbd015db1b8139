//! Periodic Evans function from the monodromy of the eigenvalue problem.
//!
//! For `v = (τ, u)` the eigenvalue problem `λ v = L v` is written as
//! `Y' = A(x; λ) Y` with `Y = (τ, u, u')`. The first row of `L` gives
//! `τ' = (λ τ − u')/c`; the second, after expanding `(β u')'` and
//! `(a τ − c u)'` with `β = ν τ̄⁻²` and `a = −τ̄⁻³(F⁻¹ + 2νcτ̄')`, gives
//!
//! ```text
//! β u'' = (a' + aλ/c − C₂₁) τ + (λ − C₂₂) u − (β' + a/c + c) u'
//! ```
//!
//! The coefficients are evaluated from `(τ̄, τ̄')` integrated alongside `Y`,
//! restarted from the stored shooting nodes at every segment boundary.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::Dop853;
use crate::orbit::{PeriodicProfile, ProfileOde};
use crate::whitham::WhithamData;

pub type Mat3 = [[Complex64; 3]; 3];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `A(x; λ)` as a function of the local profile state.
#[derive(Debug, Clone, Copy)]
pub struct FirstOrderSystem {
    pub ode: ProfileOde,
    pub lambda: Complex64,
}

pub fn first_order_system(profile: &PeriodicProfile, lambda: Complex64) -> Result<FirstOrderSystem> {
    if profile.spec.c == 0.0 {
        return Err(Error::Domain("first-order reduction needs c ≠ 0".into()));
    }
    Ok(FirstOrderSystem { ode: profile.ode(), lambda })
}

impl FirstOrderSystem {
    /// Coefficient matrix and its trace at profile state `(τ̄, τ̄')`.
    pub fn matrix(&self, tau: f64, tau_x: f64) -> Option<(Mat3, Complex64)> {
        let p = &self.ode.params;
        let c = self.ode.c;
        let lam = self.lambda;
        let tau_xx = self.ode.accel(tau, tau_x)?;
        let u = self.ode.q - c * tau;
        let stiff = 1.0 / p.froude + 2.0 * p.nu * c * tau_x;
        let a = -stiff / tau.powi(3);
        let a_x = 3.0 * tau_x * stiff / tau.powi(4) - 2.0 * p.nu * c * tau_xx / tau.powi(3);
        let beta = p.nu / (tau * tau);
        let beta_x = -2.0 * p.nu * tau_x / tau.powi(3);
        let c21 = -(p.s + 1.0) * tau.powf(p.s) * u.powf(p.r);
        let c22 = -p.r * tau.powf(p.s + 1.0) * u.powf(p.r - 1.0);
        let m = [
            [lam / c, ZERO, Complex64::new(-1.0 / c, 0.0)],
            [ZERO, ZERO, ONE],
            [(a_x - c21 + a * lam / c) / beta, (lam - c22) / beta, Complex64::new(-(beta_x + a / c + c) / beta, 0.0)],
        ];
        let trace = m[0][0] + m[2][2];
        Some((m, trace))
    }

    /// `A` at position `x` of the profile.
    pub fn at(&self, profile: &PeriodicProfile, x: f64) -> Result<Mat3> {
        let [t, tx] = profile.state_at(x)?;
        self.matrix(t, tx).map(|(m, _)| m).ok_or_else(|| Error::Domain("profile state outside the model domain".into()))
    }
}

pub fn identity() -> Mat3 {
    let mut m = [[ZERO; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

pub fn det3(m: &Mat3) -> Complex64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn frobenius(m: &Mat3) -> f64 {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn inverse(m: &Mat3) -> Option<Mat3> {
    let d = det3(m);
    if d.norm() == 0.0 {
        return None;
    }
    let mut inv = [[ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / d;
        }
    }
    Some(inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonodromySample {
    pub lambda: Complex64,
    pub psi: Mat3,
    /// `‖Ψ‖_F ‖Ψ⁻¹‖_F`.
    pub condition: f64,
    /// `∫ tr A` over the interval.
    pub trace_integral: Complex64,
    /// Largest relative mismatch of `det Y` against `exp ∫ tr A` over the
    /// pieces between shooting nodes. Over a whole period `det Ψ` is lost to
    /// cancellation once `Ψ` is badly conditioned, so only the local
    /// identity is a meaningful check on the integration.
    pub abel_residual: f64,
}

impl MonodromySample {
    pub fn norm(&self) -> f64 {
        frobenius(&self.psi)
    }

    pub fn evans(&self, sigma: Complex64) -> Complex64 {
        let mut m = self.psi;
        for (i, row) in m.iter_mut().enumerate() {
            row[i] -= sigma;
        }
        det3(&m)
    }
}

fn integrator() -> Dop853 {
    Dop853::new(1e-11, 1e-13)
}

/// Fundamental solution over `[x0, x1]` (with `0 ≤ x0 ≤ x1 ≤ X`), normalized
/// to the identity at `x0`.
pub fn transfer(profile: &PeriodicProfile, lambda: Complex64, x0: f64, x1: f64) -> Result<MonodromySample> {
    let sys = first_order_system(profile, lambda)?;
    let period = profile.period();
    if !(0.0 <= x0 && x0 <= x1 && x1 <= period * (1.0 + 1e-14)) {
        return Err(Error::Domain(format!("transfer interval [{x0}, {x1}] outside [0, X]")));
    }
    let m = profile.nodes.len();
    let seg = period / m as f64;
    // Breakpoints: the interval ends plus every interior shooting node.
    let mut cuts = vec![x0];
    for i in 1..m {
        let xi = i as f64 * seg;
        if xi > x0 && xi < x1 {
            cuts.push(xi);
        }
    }
    cuts.push(x1);

    // y = [τ̄, τ̄', Re/Im Y (row-major 3×3), Re/Im ∫tr A]; Y restarts at the
    // identity on every piece and the pieces are multiplied together.
    let mut y = vec![0.0; 22];
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| -> bool {
        let Some((a, tr)) = sys.matrix(y[0], y[1]) else { return false };
        let Some(acc) = sys.ode.accel(y[0], y[1]) else { return false };
        dy[0] = y[1];
        dy[1] = acc;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = ZERO;
                for k in 0..3 {
                    let idx = 2 + 2 * (3 * k + j);
                    s += a[i][k] * Complex64::new(y[idx], y[idx + 1]);
                }
                let o = 2 + 2 * (3 * i + j);
                dy[o] = s.re;
                dy[o + 1] = s.im;
            }
        }
        dy[20] = tr.re;
        dy[21] = tr.im;
        dy.iter().all(|v| v.is_finite())
    };
    let ode = integrator().with_max_step(seg);
    let mut psi = identity();
    let mut trace_integral = ZERO;
    let mut abel_residual: f64 = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let node = (a / seg).round();
        let start = if (a - node * seg).abs() <= 1e-12 * period && (node as usize) < m {
            profile.nodes[node as usize]
        } else {
            profile.state_at(a)?
        };
        y.iter_mut().for_each(|v| *v = 0.0);
        y[0] = start[0];
        y[1] = start[1];
        for i in 0..3 {
            y[2 + 2 * (3 * i + i)] = 1.0;
        }
        ode.integrate(rhs, a, &mut y, b).map_err(|f| Error::Integration {
            at: f.at(),
            reason: format!("monodromy at λ = {lambda}"),
        })?;
        let mut piece = [[ZERO; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let o = 2 + 2 * (3 * i + j);
                piece[i][j] = Complex64::new(y[o], y[o + 1]);
            }
        }
        let tr = Complex64::new(y[20], y[21]);
        abel_residual = abel_residual.max((det3(&piece) - tr.exp()).norm() / tr.exp().norm());
        trace_integral += tr;
        psi = mat_mul(&piece, &psi);
    }
    let condition = inverse(&psi).map_or(f64::INFINITY, |inv| frobenius(&psi) * frobenius(&inv));
    Ok(MonodromySample { lambda, psi, condition, trace_integral, abel_residual })
}

/// `Ψ(X; λ)`.
pub fn monodromy(profile: &PeriodicProfile, lambda: Complex64) -> Result<MonodromySample> {
    transfer(profile, lambda, 0.0, profile.period())
}

/// `D(λ, σ) = det(Ψ(X; λ) − σ I)`.
pub fn evans(profile: &PeriodicProfile, lambda: Complex64, sigma: Complex64) -> Result<Complex64> {
    Ok(monodromy(profile, lambda)?.evans(sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvansSample {
    pub lambda: Complex64,
    pub sigma: Complex64,
    pub value: Complex64,
}

/// `D` on every `λ` of `lambdas` against every `σ = e^{iθ}`, `θ ∈ phases`.
/// Monodromy evaluations run in parallel.
pub fn evans_sweep(profile: &PeriodicProfile, lambdas: &[Complex64], phases: &[f64]) -> Result<Vec<EvansSample>> {
    use rayon::prelude::*;
    let psis: Vec<MonodromySample> = lambdas.par_iter().map(|&l| monodromy(profile, l)).collect::<Result<_>>()?;
    Ok(psis
        .iter()
        .flat_map(|m| {
            phases.iter().map(move |&th| {
                let sigma = Complex64::from_polar(1.0, th);
                EvansSample { lambda: m.lambda, sigma, value: m.evans(sigma) }
            })
        })
        .collect())
}

/// CSV with columns `re_lambda, im_lambda, sigma_phase, re_D, im_D`.
pub fn evans_csv(samples: &[EvansSample]) -> String {
    let mut out = String::from("re_lambda,im_lambda,sigma_phase,re_D,im_D\n");
    for s in samples {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            s.lambda.re,
            s.lambda.im,
            s.sigma.arg(),
            s.value.re,
            s.value.im
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub t: f64,
    pub ratio: Complex64,
}

/// `D(tλ₀, e^{tν₀}) / Δ(tλ₀, tν₀)` along one ray, with `Δ` the co-moving
/// Whitham quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioDiagnostics {
    pub lambda0: Complex64,
    pub nu0: Complex64,
    pub samples: Vec<RatioSample>,
    /// Intercept of the fit `ratio ≈ Γ + G₁ t + G₂ t²`.
    pub gamma: Complex64,
    pub linear_coefficient: Complex64,
    /// Log-log slope of `|ratio − Γ|` against `t`.
    pub deviation_slope: f64,
    pub converges: bool,
}

/// Scales `t = 10⁻², 10⁻²/2, …` (`count` values).
pub fn halving_scales(count: usize) -> Vec<f64> {
    (0..count).map(|i| 1e-2 * 0.5f64.powi(i as i32)).collect()
}

pub fn leading_order_ratio(
    profile: &PeriodicProfile,
    wd: &WhithamData,
    lambda0: Complex64,
    nu0: Complex64,
    scales: &[f64],
) -> Result<RatioDiagnostics> {
    if !wd.nondegenerate {
        return Err(Error::Domain("Whitham system is degenerate (∂M/∂q ≈ 0)".into()));
    }
    if scales.len() < 3 {
        return Err(Error::Domain("need at least three scales".into()));
    }
    let unit = wd.comoving_delta(lambda0, nu0);
    let size = (lambda0.norm() + nu0.norm()).powi(2) * (wd.j1.iter().flatten().map(|v| v * v).sum::<f64>());
    if unit.norm() <= 1e-10 * size {
        return Err(Error::Domain("Δ vanishes along the requested ray".into()));
    }
    use rayon::prelude::*;
    let samples: Vec<RatioSample> = scales
        .par_iter()
        .map(|&t| {
            let d = evans(profile, lambda0 * t, (nu0 * t).exp())?;
            Ok(RatioSample { t, ratio: d / (unit * t * t) })
        })
        .collect::<Result<_>>()?;

    // Complex least squares for ratio = Γ + G₁ t + G₂ t²; the quadratic term
    // keeps the curvature of the remainder out of the intercept.
    let mut normal = faer::Mat::<f64>::zeros(3, 3);
    let mut rhs = [Complex64::new(0.0, 0.0); 3];
    for smp in &samples {
        let basis = [1.0, smp.t, smp.t * smp.t];
        for i in 0..3 {
            for j in 0..3 {
                normal[(i, j)] += basis[i] * basis[j];
            }
            rhs[i] += smp.ratio * basis[i];
        }
    }
    let re = linalg::solve(&normal, &rhs.map(|r| r.re));
    let im = linalg::solve(&normal, &rhs.map(|r| r.im));
    let gamma = Complex64::new(re[0], im[0]);
    let g1 = Complex64::new(re[1], im[1]);
    let n = samples.len() as f64;

    let logs: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| (s.t.ln(), (s.ratio - gamma).norm().max(f64::MIN_POSITIVE).ln()))
        .collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum::<f64>();
    Ok(RatioDiagnostics {
        lambda0,
        nu0,
        samples,
        gamma,
        linear_coefficient: g1,
        deviation_slope: slope,
        converges: slope >= 0.9 && gamma.norm() > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constant_state_dispersion, Equilibrium, ModelParams};

    #[test]
    fn constant_state_modes_solve_the_dispersion_relation() {
        let p = ModelParams::roll_wave_default();
        let eq = Equilibrium::balanced(&p, 0.9, 0.5);
        let prof = PeriodicProfile::constant(&eq, &p, 4.0, 16);
        for k in [0.3, 1.1, -2.0] {
            for lam in constant_state_dispersion(&p, &eq, k).roots() {
                let sys = first_order_system(&prof, lam).unwrap();
                let (mut a, _) = sys.matrix(eq.tau0, 0.0).unwrap();
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] -= Complex64::new(0.0, k);
                }
                let scale = frobenius(&a).powi(3);
                assert!(det3(&a).norm() < 1e-12 * scale, "k = {k}, λ = {lam}");
            }
        }
    }

    #[test]
    fn constant_state_monodromy_is_the_matrix_exponential_determinant() {
        let p = ModelParams::roll_wave_default();
        let eq = Equilibrium::balanced(&p, 0.9, 0.5);
        let prof = PeriodicProfile::constant(&eq, &p, 3.0, 16);
        let m = monodromy(&prof, Complex64::new(0.2, 0.7)).unwrap();
        assert!(m.abel_residual < 1e-7);
    }

    #[test]
    fn inverse_of_identity_and_a_shear() {
        let mut s = identity();
        s[0][2] = Complex64::new(2.0, 1.0);
        let inv = inverse(&s).unwrap();
        let prod = mat_mul(&s, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { ONE } else { ZERO };
                assert!((prod[i][j] - e).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn halving_scales_start_at_one_percent() {
        let s = halving_scales(3);
        assert_eq!(s, vec![1e-2, 5e-3, 2.5e-3]);
    }
}
