mod common;

use common::{member, spectrum_options};
use num_complex::Complex64;
use proptest::prelude::*;
use rollwave::bloch::{
    bloch_eigenvalues, build_coefficients, compute_spectrum, galerkin_vector, kernel_vector, xi_grid, StabilityClass,
    Window,
};
use rollwave::fourier;
use rollwave::model::{hopf_analysis, Equilibrium};
use rollwave::orbit::PeriodicProfile;
use rollwave::ModelParams;

fn class_at(period: f64) -> StabilityClass {
    let p = member(period);
    let opts = spectrum_options();
    compute_spectrum(p, &xi_grid(period, opts.xi_points), &opts).unwrap().class
}

#[test]
fn verdicts_across_the_family() {
    let (a, (b, c)) = rayon::join(|| class_at(6.2), || rayon::join(|| class_at(4.5), || class_at(25.0)));
    assert_eq!(a, StabilityClass::Stable);
    assert_eq!(b, StabilityClass::UnstableOrigin);
    assert_eq!(c, StabilityClass::UnstableEssential);
}

#[test]
fn profile_derivative_spans_the_kernel() {
    let p = member(6.2).resample(512).unwrap();
    let n = 48;
    let k = kernel_vector(&build_coefficients(&p), n).unwrap();
    let g = galerkin_vector(&p.tau_x, &p.u_x(), n);
    let dot: Complex64 = k.iter().zip(&g).map(|(a, b)| a.conj() * b).sum();
    let norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let cos = dot.norm() / (norm(&k) * norm(&g));
    let angle = cos.min(1.0).acos();
    assert!(angle < 1e-4, "angle {angle:.2e}");
}

#[test]
fn truncation_doubling_moves_leading_eigenvalues_little() {
    let p = member(6.2).resample(512).unwrap();
    let coeffs = build_coefficients(&p);
    let w = Window { re_min: -0.2, re_max: 0.2, im_max: 2.0 };
    let xi = 0.3;
    let coarse = bloch_eigenvalues(&coeffs, xi, 64, &w).unwrap();
    let fine = bloch_eigenvalues(&coeffs, xi, 128, &w).unwrap();
    assert!(!coarse.is_empty());
    for z in &coarse {
        let d = fine.iter().map(|f| (f - z).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-6, "{z}: {d:.2e}");
    }
}

#[test]
fn profile_fourier_tails_are_negligible() {
    for period in [4.5, 6.2] {
        let p = member(period).resample(512).unwrap();
        let tail = fourier::tail_magnitude(&p.fourier_tau(), 100).max(fourier::tail_magnitude(&p.fourier_u(), 100));
        assert!(tail < 1e-10, "X = {period}: {tail:.2e}");
    }
}

#[test]
fn hopf_equilibrium_is_spectrally_unstable() {
    let params = ModelParams::roll_wave_default();
    let h = hopf_analysis(&params, 1.0).unwrap();
    let eq = Equilibrium::balanced(&params, 1.0, h.cs);
    let flat = PeriodicProfile::constant(&eq, &params, h.period.unwrap(), 64);
    let coeffs = build_coefficients(&flat);
    let ev = bloch_eigenvalues(&coeffs, 0.2, 8, &Window::default()).unwrap();
    assert!(ev[0].re > 0.0, "{:?}", ev[0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Real coefficients: the spectrum at −ξ is the conjugate of that at ξ.
    #[test]
    fn floquet_conjugation_symmetry(xi in 0.01f64..0.5) {
        let p = member(6.2);
        let coeffs = build_coefficients(&p.resample(256).unwrap());
        let w = Window { re_min: -0.5, re_max: 0.5, im_max: 3.0 };
        let plus = bloch_eigenvalues(&coeffs, xi, 24, &w).unwrap();
        let minus = bloch_eigenvalues(&coeffs, -xi, 24, &w).unwrap();
        for z in &plus {
            let d = minus.iter().map(|m| (m - z.conj()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-8, "{} unmatched ({:.2e})", z, d);
        }
    }
}
