//! The generalized St. Venant system in Lagrangian mass coordinates,
//!
//! ```text
//! τ_t − u_x = 0,
//! u_t + ((2F)⁻¹ τ⁻²)_x = 1 − τ^{s+1} u^r + ν (τ⁻² u_x)_x,
//! ```
//!
//! its constant states, the Hopf conditions for the traveling-wave profile
//! equation, and the dispersion relation of constant states.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Froude number `F`.
    pub froude: f64,
    /// Viscosity `ν` (inverse Reynolds number).
    pub nu: f64,
    /// Friction exponent on the velocity, `1 ≤ r ≤ 2`.
    pub r: f64,
    /// Friction exponent on the height, `0 ≤ s ≤ 2`.
    pub s: f64,
}

impl ModelParams {
    pub fn new(froude: f64, nu: f64, r: f64, s: f64) -> Result<Self> {
        let check = |ok: bool, name: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: reason.to_string() })
            }
        };
        check(froude.is_finite() && froude > 0.0, "froude", "must be positive")?;
        check(nu.is_finite() && nu > 0.0, "nu", "must be positive")?;
        check((1.0..=2.0).contains(&r), "r", "must lie in [1, 2]")?;
        check((0.0..=2.0).contains(&s), "s", "must lie in [0, 2]")?;
        Ok(Self { froude, nu, r, s })
    }

    /// Turbulent friction law `(r, s) = (2, 0)` with `F = 6`, `ν = 0.1`.
    pub fn roll_wave_default() -> Self {
        Self { froude: 6.0, nu: 0.1, r: 2.0, s: 0.0 }
    }

    /// Bottom friction `τ^{s+1} u^r`.
    #[inline]
    pub fn friction(&self, tau: f64, u: f64) -> f64 {
        tau.powf(self.s + 1.0) * u.powf(self.r)
    }

    /// Partial derivatives of the friction with respect to `(τ, u)`.
    #[inline]
    pub fn friction_gradient(&self, tau: f64, u: f64) -> (f64, f64) {
        let s = self.s;
        let r = self.r;
        ((s + 1.0) * tau.powf(s) * u.powf(r), r * tau.powf(s + 1.0) * u.powf(r - 1.0))
    }

    /// Pressure term `(2F)⁻¹ τ⁻²`.
    #[inline]
    pub fn pressure(&self, tau: f64) -> f64 {
        0.5 / (self.froude * tau * tau)
    }

    /// The critical speed `c_s = τ^{-3/2}/√F` at specific volume `τ`.
    #[inline]
    pub fn sound_speed(&self, tau: f64) -> f64 {
        tau.powf(-1.5) / self.froude.sqrt()
    }

    /// Equilibrium velocity `u₀ = τ₀^{-(s+1)/r}` balancing gravity against friction.
    #[inline]
    pub fn balanced_velocity(&self, tau0: f64) -> f64 {
        tau0.powf(-(self.s + 1.0) / self.r)
    }
}

/// Point values and spatial derivatives of a smooth Lagrangian state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalJet {
    pub tau: f64,
    pub tau_x: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
}

/// Evaluates `(τ_t, u_t)` from point values and derivatives.
pub fn lagrangian_rhs(jet: &LocalJet, params: &ModelParams) -> Result<(f64, f64)> {
    if !(jet.tau > 0.0) {
        return Err(Error::Domain(format!("vacuum: tau = {}", jet.tau)));
    }
    if !(jet.u > 0.0) {
        return Err(Error::Domain(format!("flow reversal: u = {}", jet.u)));
    }
    let tau = jet.tau;
    let pressure_x = -jet.tau_x / (params.froude * tau.powi(3));
    let viscous = params.nu * (jet.u_xx / (tau * tau) - 2.0 * jet.tau_x * jet.u_x / tau.powi(3));
    let u_t = -pressure_x + 1.0 - params.friction(tau, jet.u) + viscous;
    Ok((jet.u_x, u_t))
}

/// A constant state of the profile equation together with the wave parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub tau0: f64,
    pub u0: f64,
    /// Integration constant `q = u₀ + c τ₀`.
    pub q: f64,
    /// Wavespeed `c`.
    pub c: f64,
}

impl Equilibrium {
    /// The balanced state at `τ₀` viewed in a frame with speed `c`.
    pub fn balanced(params: &ModelParams, tau0: f64, c: f64) -> Self {
        let u0 = params.balanced_velocity(tau0);
        Self { tau0, u0, q: u0 + c * tau0, c }
    }

    /// `τ₀^{s+1} u₀^r − 1`.
    pub fn residual(&self, params: &ModelParams) -> f64 {
        params.friction(self.tau0, self.u0) - 1.0
    }
}

const EQUILIBRIUM_SCAN: usize = 10_000;

/// All constant states `τ₀ ∈ (0, q/c)` with `τ₀^{s+1}(q − cτ₀)^r = 1`, ascending.
pub fn find_equilibria(params: &ModelParams, q: f64, c: f64) -> Vec<Equilibrium> {
    if !(q > 0.0) || !(c >= 0.0) {
        return Vec::new();
    }
    if c == 0.0 {
        let tau0 = q.powf(-params.r / (params.s + 1.0));
        return vec![Equilibrium { tau0, u0: q, q, c }];
    }
    // Log form: φ(τ) = (s+1) ln τ + r ln(q − cτ), which tends to −∞ at both ends.
    let phi = |t: f64| (params.s + 1.0) * t.ln() + params.r * (q - c * t).ln();
    let dphi = |t: f64| (params.s + 1.0) / t - params.r * c / (q - c * t);
    let upper = q / c;
    let grid = |i: usize| upper * i as f64 / EQUILIBRIUM_SCAN as f64;

    let mut roots: Vec<f64> = Vec::new();
    let mut prev_t = grid(1);
    let mut prev_f = phi(prev_t);
    for i in 2..EQUILIBRIUM_SCAN {
        let t = grid(i);
        let f = phi(t);
        if prev_f == 0.0 {
            roots.push(prev_t);
        } else if prev_f * f < 0.0 {
            let (mut lo, mut hi) = (prev_t, t);
            let mut flo = prev_f;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = phi(mid);
                if fm == 0.0 || hi - lo < 1e-15 * hi {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            let mut root = 0.5 * (lo + hi);
            for _ in 0..3 {
                let d = dphi(root);
                if d != 0.0 {
                    let next = root - phi(root) / d;
                    if next > prev_t && next < t {
                        root = next;
                    }
                }
            }
            roots.push(root);
        }
        prev_t = t;
        prev_f = f;
    }
    roots
        .into_iter()
        .map(|tau0| Equilibrium { tau0, u0: q - c * tau0, q, c })
        .collect()
}

/// Hopf data of the profile equation linearized at a constant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfPoint {
    pub tau0: f64,
    pub u0: f64,
    /// Critical wavespeed `c_s`.
    pub cs: f64,
    /// Hopf wavenumber `k_H`, present only when admissible.
    pub k_h: Option<f64>,
    /// Hopf period `2π/k_H`.
    pub period: Option<f64>,
    pub admissible: bool,
}

impl HopfPoint {
    /// The equilibrium at which the bifurcation occurs.
    pub fn equilibrium(&self) -> Equilibrium {
        Equilibrium { tau0: self.tau0, u0: self.u0, q: self.u0 + self.cs * self.tau0, c: self.cs }
    }
}

pub fn hopf_analysis(params: &ModelParams, tau0: f64) -> Result<HopfPoint> {
    if !(tau0 > 0.0) {
        return Err(Error::InvalidParameter { name: "tau0", reason: "must be positive".into() });
    }
    let (r, s) = (params.r, params.s);
    let u0 = params.balanced_velocity(tau0);
    let cs = params.sound_speed(tau0);
    let threshold = (s + 1.0) / r * tau0.powf(-(r + s + 1.0) / r);
    let admissible = threshold > cs;
    let (k_h, period) = if admissible {
        let k2 = ((s + 1.0) / tau0 - cs * r / u0) * tau0 * tau0 / (cs * params.nu);
        let k = k2.sqrt();
        (Some(k), Some(2.0 * std::f64::consts::PI / k))
    } else {
        (None, None)
    };
    Ok(HopfPoint { tau0, u0, cs, k_h, period, admissible })
}

/// Fourier symbol of the profile equation linearized at `eq`:
/// `(s+1)/τ₀ − c r/u₀ + i k (c² − c_s²) − c ν k²/τ₀²`.
pub fn profile_symbol(params: &ModelParams, eq: &Equilibrium, k: f64) -> Complex64 {
    let (r, s) = (params.r, params.s);
    let cs2 = eq.tau0.powi(-3) / params.froude;
    Complex64::new(
        (s + 1.0) / eq.tau0 - eq.c * r / eq.u0 - eq.c * params.nu * k * k / (eq.tau0 * eq.tau0),
        k * (eq.c * eq.c - cs2),
    )
}

/// The two roots of the constant-state dispersion relation at frequency `k`,
/// ordered by real part then imaginary part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionRoots {
    pub k: f64,
    pub lambda_minus: Complex64,
    pub lambda_plus: Complex64,
}

impl DispersionRoots {
    pub fn roots(&self) -> [Complex64; 2] {
        [self.lambda_minus, self.lambda_plus]
    }
}

/// Coefficients `(b, d)` of `λ² + bλ + d = 0`.
pub fn dispersion_coefficients(params: &ModelParams, eq: &Equilibrium, k: f64) -> (Complex64, Complex64) {
    let i = Complex64::i();
    let b = params.r / eq.u0 - 2.0 * i * eq.c * k + params.nu * k * k / (eq.tau0 * eq.tau0);
    let d = i * k * profile_symbol(params, eq, k);
    (b, d)
}

pub fn constant_state_dispersion(params: &ModelParams, eq: &Equilibrium, k: f64) -> DispersionRoots {
    let (b, d) = dispersion_coefficients(params, eq, k);
    let [lo, hi] = sorted_pair(solve_monic_quadratic(b, d));
    DispersionRoots { k, lambda_minus: lo, lambda_plus: hi }
}

/// Roots of `λ² + bλ + d`, using the cancellation-free form for the small root.
pub(crate) fn solve_monic_quadratic(b: Complex64, d: Complex64) -> [Complex64; 2] {
    let disc = (b * b - 4.0 * d).sqrt();
    let w = if (b.conj() * disc).re >= 0.0 { -0.5 * (b + disc) } else { -0.5 * (b - disc) };
    if w.norm() == 0.0 {
        return [Complex64::new(0.0, 0.0); 2];
    }
    [w, d / w]
}

pub(crate) fn sorted_pair([a, b]: [Complex64; 2]) -> [Complex64; 2] {
    let key = |z: &Complex64| (z.re, z.im);
    if key(&a).partial_cmp(&key(&b)) == Some(std::cmp::Ordering::Greater) {
        [b, a]
    } else {
        [a, b]
    }
}

/// The root of the dispersion relation continuous with `λ(0) = 0`, tracked
/// from `k = 0` by minimal-distance continuation.
pub fn neutral_branch(params: &ModelParams, eq: &Equilibrium, k: f64) -> Complex64 {
    let steps = ((k.abs() / 1e-2).ceil() as usize).max(1);
    let mut current = Complex64::new(0.0, 0.0);
    for j in 1..=steps {
        let kj = k * j as f64 / steps as f64;
        let roots = constant_state_dispersion(params, eq, kj).roots();
        current = if (roots[0] - current).norm() <= (roots[1] - current).norm() { roots[0] } else { roots[1] };
    }
    current
}

/// Closed-form `(λ′(0), λ″(0))` of the neutral branch.
pub fn neutral_branch_derivatives(params: &ModelParams, eq: &Equilibrium) -> (Complex64, Complex64) {
    let i = Complex64::i();
    let (r, s) = (params.r, params.s);
    let cs2 = eq.tau0.powi(-3) / params.froude;
    let b0 = r / eq.u0;
    let b1 = -2.0 * i * eq.c;
    let d1 = i * ((s + 1.0) / eq.tau0 - eq.c * r / eq.u0);
    let d2 = Complex64::new(-(eq.c * eq.c - cs2), 0.0);
    let first = -d1 / b0;
    let half_second = -(first * first + b1 * first + d2) / b0;
    (first, 2.0 * half_second)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p20() -> ModelParams {
        ModelParams::roll_wave_default()
    }

    #[test]
    fn rejects_out_of_range_parameters() {
        assert!(ModelParams::new(0.0, 0.1, 2.0, 0.0).is_err());
        assert!(ModelParams::new(6.0, -0.1, 2.0, 0.0).is_err());
        assert!(ModelParams::new(6.0, 0.1, 2.5, 0.0).is_err());
        assert!(ModelParams::new(6.0, 0.1, 2.0, 2.1).is_err());
        assert!(ModelParams::new(6.0, 0.1, 1.0, 2.0).is_ok());
    }

    #[test]
    fn rhs_vanishes_at_equilibria() {
        for &(r, s) in &[(2.0, 0.0), (1.0, 1.0), (1.5, 2.0)] {
            let p = ModelParams::new(6.0, 0.1, r, s).unwrap();
            let jet = LocalJet { tau: 1.0, u: 1.0, ..Default::default() };
            assert_eq!(lagrangian_rhs(&jet, &p).unwrap(), (0.0, 0.0));
            let tau0 = 1.3;
            let jet = LocalJet { tau: tau0, u: p.balanced_velocity(tau0), ..Default::default() };
            let (a, b) = lagrangian_rhs(&jet, &p).unwrap();
            assert!(a == 0.0 && b.abs() < 1e-14);
        }
    }

    #[test]
    fn rhs_hand_evaluation() {
        let jet = LocalJet { tau: 1.0, u: 1.0, u_x: 1.0, ..Default::default() };
        let (a, b) = lagrangian_rhs(&jet, &p20()).unwrap();
        assert_eq!(a, 1.0);
        assert!(b.abs() < 1e-15);
        // pressure: −((2F)⁻¹τ⁻²)_x = F⁻¹ τ⁻³ τ_x ; viscous: ν(τ⁻² u_xx − 2τ⁻³ τ_x u_x).
        let jet = LocalJet { tau: 2.0, tau_x: 0.5, u: 0.5, u_x: 0.25, u_xx: -1.0 };
        let (_, b) = lagrangian_rhs(&jet, &p20()).unwrap();
        let expected = 0.5 / (6.0 * 8.0) + 1.0 - 2.0 * 0.25 + 0.1 * (-1.0 / 4.0 - 2.0 * 0.5 * 0.25 / 8.0);
        assert!((b - expected).abs() < 1e-15);
    }

    #[test]
    fn rhs_domain_errors() {
        let p = p20();
        assert!(matches!(
            lagrangian_rhs(&LocalJet { tau: 0.0, u: 1.0, ..Default::default() }, &p),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            lagrangian_rhs(&LocalJet { tau: 1.0, u: -0.1, ..Default::default() }, &p),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn equilibria_examples() {
        let p = p20();
        let eqs = find_equilibria(&p, 1.4, 0.4);
        assert!(eqs.iter().any(|e| (e.tau0 - 1.0).abs() < 1e-12), "{eqs:?}");
        for e in &eqs {
            assert!(e.residual(&p).abs() < 1e-12);
            assert_eq!(e.u0, e.q - e.c * e.tau0);
        }
        assert!(eqs.windows(2).all(|w| w[0].tau0 < w[1].tau0));

        let eqs = find_equilibria(&p, 1.0, 0.0);
        assert_eq!(eqs.len(), 1);
        assert_eq!(eqs[0].tau0, 1.0);

        assert!(find_equilibria(&p, -1.0, 0.3).is_empty());
    }

    #[test]
    fn equilibria_on_the_end_state_closure() {
        // q = u₋ + c/u₋² always admits τ₋ = 1/u₋².
        let p = p20();
        let um: f64 = 0.96;
        let c = 0.566;
        let eqs = find_equilibria(&p, um + c / (um * um), c);
        assert_eq!(eqs.len(), 2, "{eqs:?}");
        assert!(eqs.iter().any(|e| (e.tau0 - 1.0 / (um * um)).abs() < 1e-12));
        assert!((1.0 / (um * um) - 1.0851).abs() < 1e-4);
    }

    #[test]
    fn hopf_examples() {
        let at = |f: f64| hopf_analysis(&ModelParams::new(f, 0.1, 2.0, 0.0).unwrap(), 1.0).unwrap();
        assert!(!at(4.0).admissible);
        assert!(!at(3.0).admissible);
        let h = at(6.0);
        assert!(h.admissible);
        assert!((h.cs - 6f64.powf(-0.5)).abs() < 1e-12);
        // k² = (1 − 2c_s)/(c_s ν)
        let k_expected = ((1.0 - 2.0 * h.cs) / (h.cs * 0.1)).sqrt();
        assert!((h.k_h.unwrap() - k_expected).abs() < 1e-12);
        assert!((h.k_h.unwrap() - 2.120).abs() < 1e-3);
        assert!((h.period.unwrap() - 2.964).abs() < 1e-3);
        let eq = h.equilibrium();
        assert!(profile_symbol(&ModelParams::new(6.0, 0.1, 2.0, 0.0).unwrap(), &eq, h.k_h.unwrap()).norm() < 1e-10);
    }

    #[test]
    fn dispersion_at_zero_and_at_hopf() {
        let p = p20();
        let eq = Equilibrium::balanced(&p, 1.0, 0.3);
        let d = constant_state_dispersion(&p, &eq, 0.0);
        assert!((d.lambda_minus - Complex64::new(-2.0, 0.0)).norm() < 1e-14);
        assert!(d.lambda_plus.norm() < 1e-14);

        let h = hopf_analysis(&p, 1.0).unwrap();
        let eq = h.equilibrium();
        for k in [h.k_h.unwrap(), -h.k_h.unwrap()] {
            let d = constant_state_dispersion(&p, &eq, k);
            assert!(d.roots().iter().any(|z| z.norm() < 1e-10), "{d:?}");
        }
    }

    #[test]
    fn neutral_branch_closed_form_matches_finite_differences() {
        let p = p20();
        let h = hopf_analysis(&p, 1.0).unwrap();
        let eq = h.equilibrium();
        let (d1, d2) = neutral_branch_derivatives(&p, &eq);
        assert_eq!(d1.re, 0.0);
        assert!((d1.im - -(0.5 - 6f64.powf(-0.5))).abs() < 1e-12);
        assert!((0.5 * d2.re - 1.0 / 24.0).abs() < 1e-12 && d2.im.abs() < 1e-12);

        let step = 1e-3;
        let l = |k: f64| neutral_branch(&p, &eq, k);
        let fd1 = (l(-2.0 * step) - 8.0 * l(-step) + 8.0 * l(step) - l(2.0 * step)) / (12.0 * step);
        let fd2 = (-l(2.0 * step) + 16.0 * l(step) - 30.0 * l(0.0) + 16.0 * l(-step) - l(-2.0 * step))
            / (12.0 * step * step);
        assert!((fd1 - d1).norm() / d1.norm() < 1e-6);
        assert!((fd2 - d2).norm() / d2.norm() < 1e-4);
    }

    #[test]
    fn hopf_detection_paths_agree() {
        // Profile-ODE symbol root vs. PDE dispersion constant term root.
        let p = ModelParams::new(7.5, 0.05, 1.5, 1.0).unwrap();
        let h = hopf_analysis(&p, 0.9).unwrap();
        assert!(h.admissible);
        let eq = h.equilibrium();
        // bisection on |d(k)| minimum via the real part of the symbol
        let f = |k: f64| profile_symbol(&p, &eq, k).re;
        let (mut lo, mut hi) = (1e-6, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let k_dispersion = 0.5 * (lo + hi);
        assert!((k_dispersion - h.k_h.unwrap()).abs() < 1e-8);
        let (_, d) = dispersion_coefficients(&p, &eq, k_dispersion);
        assert!(d.norm() < 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dispersion_conjugate_symmetry(tau0 in 0.5f64..2.0, c in 0.0f64..1.0, k in -10.0f64..10.0,
                                              r in 1.0f64..2.0, s in 0.0f64..2.0) {
                let p = ModelParams::new(6.0, 0.1, r, s).unwrap();
                let eq = Equilibrium::balanced(&p, tau0, c);
                let a = constant_state_dispersion(&p, &eq, k).roots();
                let b = sorted_pair(constant_state_dispersion(&p, &eq, -k).roots().map(|z| z.conj()));
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).norm() <= 1e-10 * (1.0 + x.norm()));
                }
            }

            #[test]
            fn dispersion_roots_residual(tau0 in 0.5f64..2.0, c in 0.0f64..1.0, k in -20.0f64..20.0) {
                let p = ModelParams::roll_wave_default();
                let eq = Equilibrium::balanced(&p, tau0, c);
                let (b, d) = dispersion_coefficients(&p, &eq, k);
                for z in constant_state_dispersion(&p, &eq, k).roots() {
                    let scale = (z * z).norm() + (b * z).norm() + d.norm();
                    prop_assert!((z * z + b * z + d).norm() <= 1e-10 * scale.max(1e-300));
                }
            }

            #[test]
            fn equilibria_residuals(q in 0.5f64..3.0, c in 0.0f64..1.0, r in 1.0f64..2.0, s in 0.0f64..2.0) {
                let p = ModelParams::new(6.0, 0.1, r, s).unwrap();
                for e in find_equilibria(&p, q, c) {
                    prop_assert!(e.residual(&p).abs() < 1e-12);
                    prop_assert!(e.tau0 > 0.0 && e.u0 > 0.0);
                }
            }
        }
    }
}
