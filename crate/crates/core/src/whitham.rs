//! First-order Whitham modulation system of the wave family.
//!
//! Eulerian slow variables are the wavenumber `k = 1/L_E` (with `L_E` the
//! Eulerian period) and the mean depth `M`. The averaged equations
//! `k_t + (k c)_x = 0`, `M_t + (c M − q)_x = 0` are parametrized by the
//! Eulerian speed and flux constant `(c, q)`, which for a Lagrangian orbit
//! with constants `(c_L, q_L)` are `(q_L, c_L)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bloch::CriticalCurves;
use crate::error::{Error, Result};
use crate::model::solve_monic_quadratic;
use crate::orbit::{shooting_solve_fixed, PeriodicProfile};

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedQuantities {
    /// Eulerian period `L_E = ∫₀^X τ̄ dx`.
    pub eulerian_period: f64,
    pub k: f64,
    /// Mean depth `M = X / L_E`.
    pub m: f64,
    /// Eulerian phase speed (equals the Lagrangian `q`).
    pub c_e: f64,
    /// Eulerian flux constant `c_E M − ⟨h u⟩` (equals the Lagrangian `c`).
    pub q_e: f64,
    /// Phase speed measured by following a constant-phase point.
    pub tracked_speed: f64,
}

/// Quadrature over the periodic grid (spectrally accurate trapezoid rule).
pub fn averaged_quantities(profile: &PeriodicProfile) -> AveragedQuantities {
    let n = profile.len() as f64;
    let x = profile.period();
    let c = profile.spec.c;
    let l_e = profile.tau.iter().sum::<f64>() * x / n;
    let mass_flux = profile.u.iter().sum::<f64>() * x / n / l_e;
    let m = x / l_e;
    let c_e = profile.spec.q;
    // dX_e/dt along x = c t is τ c + u; averaging the samples gives the phase speed.
    let tracked_speed = profile.tau.iter().zip(&profile.u).map(|(t, u)| c * t + u).sum::<f64>() / n;
    AveragedQuantities { eulerian_period: l_e, k: 1.0 / l_e, m, c_e, q_e: c_e * m - mass_flux, tracked_speed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hyperbolicity {
    Hyperbolic,
    Elliptic,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhithamData {
    pub averaged: AveragedQuantities,
    /// `∂(k, M)/∂(c, q)`.
    pub j1: Mat2,
    /// `∂(k c, c M − q)/∂(c, q)`.
    pub j2: Mat2,
    /// Roots of `det(z J1 − J2)`, ordered by real then imaginary part.
    pub z: [Complex64; 2],
    pub class: Hyperbolicity,
    /// `∂M/∂q`; the non-degeneracy margin.
    pub dm_dq: f64,
    pub nondegenerate: bool,
    /// False when `J1` is numerically singular.
    pub evolutionary: bool,
    pub step: f64,
}

fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

fn norm(a: &Mat2) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

/// Roots of `det(z J1 − J2) = 0` and the hyperbolicity class.
pub fn characteristic_roots(j1: &Mat2, j2: &Mat2) -> Result<([Complex64; 2], Hyperbolicity)> {
    let a = det(j1);
    if a.abs() <= 1e-12 * norm(j1).powi(2) {
        return Err(Error::Domain("J1 is singular: averaged system is not evolutionary".into()));
    }
    let b = -(j1[0][0] * j2[1][1] + j1[1][1] * j2[0][0] - j1[0][1] * j2[1][0] - j1[1][0] * j2[0][1]);
    let c = det(j2);
    let (bm, cm) = (b / a, c / a);
    let disc = bm * bm - 4.0 * cm;
    let scale = (norm(j2) / norm(j1)).powi(2);
    let class = if disc.abs() <= 1e-8 * scale {
        Hyperbolicity::Degenerate
    } else if disc > 0.0 {
        Hyperbolicity::Hyperbolic
    } else {
        Hyperbolicity::Elliptic
    };
    let mut z = solve_monic_quadratic(Complex64::new(bm, 0.0), Complex64::new(cm, 0.0));
    // partial_cmp treats ±0 alike, so purely imaginary pairs order by Im.
    z.sort_by(|p, q| p.re.partial_cmp(&q.re).unwrap_or(std::cmp::Ordering::Equal).then(p.im.total_cmp(&q.im)));
    Ok((z, class))
}

impl WhithamData {
    /// `Δ(λ, ν) = det(λ J1 − ν J2)` in Eulerian variables.
    pub fn delta(&self, lambda: Complex64, nu: Complex64) -> Complex64 {
        det_c(&self.j1, &self.j2, lambda, nu)
    }

    /// The same quadratic written for the Lagrangian co-moving frame in
    /// which the Evans function is computed: `det(λ J1 − ν k (c J1 − J2))`.
    /// Its roots `λ = −k (z − c) ν` are the Whitham speeds seen in that frame.
    pub fn comoving_delta(&self, lambda: Complex64, nu: Complex64) -> Complex64 {
        let (k, c) = (self.averaged.k, self.averaged.c_e);
        let mut g = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = k * (c * self.j1[i][j] - self.j2[i][j]);
            }
        }
        det_c(&self.j1, &g, lambda, nu)
    }

    /// Whitham speeds converted to Bloch first-order coefficients:
    /// `λ(ξ) ≈ −i z_B ξ` with `z_B = M (z − c)`.
    pub fn bloch_speeds(&self) -> [Complex64; 2] {
        let (m, c) = (self.averaged.m, self.averaged.c_e);
        self.z.map(|z| m * (z - c))
    }
}

fn det_c(p: &Mat2, q: &Mat2, lambda: Complex64, nu: Complex64) -> Complex64 {
    let e = |i: usize, j: usize| lambda * p[i][j] - nu * q[i][j];
    e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0)
}

/// The family is steep in `(c, q)`, so second-order truncation error of the
/// stencil dominates unless the step is small; orbits are solved to 1e−10.
pub const DEFAULT_RELATIVE_STEP: f64 = 1e-6;

/// Central differences of `(k, M, k c, c M − q)` with respect to the
/// Eulerian `(c, q)`, each stencil orbit solved at fixed Lagrangian `(c, q)`.
pub fn whitham_jacobians(profile: &PeriodicProfile, step: Option<f64>) -> Result<WhithamData> {
    let base = averaged_quantities(profile);
    let h = step.unwrap_or(DEFAULT_RELATIVE_STEP * base.c_e.abs().max(1.0));
    let (c_l, q_l) = (profile.spec.c, profile.spec.q);
    // Column 0 varies the Eulerian c (= q_L), column 1 the Eulerian q (= c_L).
    let stencil = |dc_e: f64, dq_e: f64| -> Result<[f64; 4]> {
        let orbit = shooting_solve_fixed(profile, c_l + dq_e, q_l + dc_e)?;
        let a = averaged_quantities(&orbit);
        Ok([a.k, a.m, a.k * a.c_e, a.c_e * a.m - a.q_e])
    };
    let mut j1 = [[0.0; 2]; 2];
    let mut j2 = [[0.0; 2]; 2];
    for col in 0..2 {
        let (dc, dq) = if col == 0 { (h, 0.0) } else { (0.0, h) };
        let plus = stencil(dc, dq)?;
        let minus = stencil(-dc, -dq)?;
        let d: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        j1[0][col] = d[0];
        j1[1][col] = d[1];
        j2[0][col] = d[2];
        j2[1][col] = d[3];
    }
    let (z, class, evolutionary) = match characteristic_roots(&j1, &j2) {
        Ok((z, class)) => (z, class, true),
        Err(_) => ([Complex64::new(f64::NAN, 0.0); 2], Hyperbolicity::Degenerate, false),
    };
    let dm_dq = j1[1][1];
    Ok(WhithamData {
        averaged: base,
        j1,
        j2,
        z,
        class,
        dm_dq,
        nondegenerate: dm_dq.abs() > 1e-8,
        evolutionary,
        step: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyReport {
    /// Whitham speeds mapped to Bloch coefficients.
    pub whitham: [Complex64; 2],
    /// Fitted Bloch coefficients, in the matched order.
    pub bloch: [Complex64; 2],
    pub mismatch: f64,
    pub pass: bool,
}

/// Matches the two sets as unordered pairs; mismatch is the larger of the
/// two relative distances.
pub fn verify_tangency(wd: &WhithamData, curves: &CriticalCurves) -> TangencyReport {
    let w = wd.bloch_speeds();
    let b = [curves.fits[0].z, curves.fits[1].z];
    let rel = |x: Complex64, y: Complex64| (x - y).norm() / x.norm().max(y.norm()).max(f64::MIN_POSITIVE);
    let straight = rel(w[0], b[0]).max(rel(w[1], b[1]));
    let crossed = rel(w[0], b[1]).max(rel(w[1], b[0]));
    let (mismatch, bloch) = if straight <= crossed { (straight, b) } else { (crossed, [b[1], b[0]]) };
    TangencyReport { whitham: w, bloch, mismatch, pass: mismatch < 1e-2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Equilibrium, ModelParams};

    #[test]
    fn symmetric_and_rotation_examples() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        let (z, class) = characteristic_roots(&id, &[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(class, Hyperbolicity::Hyperbolic);
        assert!((z[0] + 1.0).norm() < 1e-14 && (z[1] - 1.0).norm() < 1e-14);
        let (z, class) = characteristic_roots(&id, &[[0.0, -1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(class, Hyperbolicity::Elliptic);
        assert!((z[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((z[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }

    #[test]
    fn singular_j1_is_not_evolutionary() {
        assert!(characteristic_roots(&[[1.0, 2.0], [2.0, 4.0]], &[[1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn constant_state_averages() {
        let p = ModelParams::roll_wave_default();
        let eq = Equilibrium::balanced(&p, 0.9, 0.5);
        let prof = PeriodicProfile::constant(&eq, &p, 3.0, 32);
        let a = averaged_quantities(&prof);
        assert!((a.k - 1.0 / (0.9 * 3.0)).abs() < 1e-14);
        assert!((a.m - 1.0 / 0.9).abs() < 1e-14);
        assert!((a.q_e - eq.c).abs() < 1e-14);
        assert!((a.tracked_speed - eq.q).abs() < 1e-14);
    }
}
