//! Trigonometric interpolation on uniform periodic grids.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Normalized discrete Fourier coefficients `ĉ_m = n⁻¹ Σ_j f_j e^{−2πi m j/n}`,
/// stored in FFT order (index `m mod n`).
pub fn coefficients(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

/// Complex variant of [`coefficients`].
pub fn coefficients_complex(samples: &[Complex64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

/// Coefficient of wavenumber `m` (may be negative); zero beyond the Nyquist band.
#[inline]
pub fn mode(coeffs: &[Complex64], m: i64) -> Complex64 {
    let n = coeffs.len() as i64;
    if 2 * m.abs() >= n {
        return Complex64::new(0.0, 0.0);
    }
    coeffs[m.rem_euclid(n) as usize]
}

/// Signed wavenumber of FFT slot `j`; the Nyquist slot maps to zero weight.
#[inline]
fn signed_index(j: usize, n: usize) -> Option<i64> {
    let j = j as i64;
    let n = n as i64;
    if 2 * j < n {
        Some(j)
    } else if 2 * j > n {
        Some(j - n)
    } else {
        None
    }
}

fn synthesize(mut coeffs: Vec<Complex64>) -> Vec<f64> {
    let n = coeffs.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut coeffs);
    coeffs.into_iter().map(|z| z.re).collect()
}

/// Spectral derivative of periodic samples on `[0, period)`.
pub fn derivative(samples: &[f64], period: f64) -> Vec<f64> {
    let n = samples.len();
    let mut c = coefficients(samples);
    for (j, z) in c.iter_mut().enumerate() {
        *z = match signed_index(j, n) {
            Some(m) => *z * Complex64::new(0.0, 2.0 * PI * m as f64 / period),
            None => Complex64::new(0.0, 0.0),
        };
    }
    synthesize(c)
}

/// Evaluates the trigonometric interpolant at an arbitrary point.
pub fn evaluate(coeffs: &[Complex64], period: f64, x: f64) -> f64 {
    let n = coeffs.len();
    let theta = 2.0 * PI * x / period;
    let mut acc = 0.0;
    for (j, z) in coeffs.iter().enumerate() {
        if let Some(m) = signed_index(j, n) {
            let (s, c) = (m as f64 * theta).sin_cos();
            acc += z.re * c - z.im * s;
        }
    }
    acc
}

/// Samples translated by `delta`: returns `f(x_j + delta)`.
pub fn shift(samples: &[f64], period: f64, delta: f64) -> Vec<f64> {
    let n = samples.len();
    let mut c = coefficients(samples);
    for (j, z) in c.iter_mut().enumerate() {
        *z = match signed_index(j, n) {
            Some(m) => *z * Complex64::from_polar(1.0, 2.0 * PI * m as f64 * delta / period),
            None => Complex64::new(0.0, 0.0),
        };
    }
    synthesize(c)
}

/// Resamples onto a uniform grid of `m` points by zero padding or truncation.
pub fn resample(samples: &[f64], m: usize) -> Vec<f64> {
    let n = samples.len();
    let c = coefficients(samples);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    for (j, z) in c.iter().enumerate() {
        if let Some(k) = signed_index(j, n) {
            if 2 * k.unsigned_abs() as usize >= m {
                continue;
            }
            out[k.rem_euclid(m as i64) as usize] = *z;
        }
    }
    synthesize(out)
}

/// Magnitude of the largest coefficient with `|m| ≥ from`.
pub fn tail_magnitude(coeffs: &[Complex64], from: usize) -> f64 {
    let n = coeffs.len();
    coeffs
        .iter()
        .enumerate()
        .filter_map(|(j, z)| signed_index(j, n).filter(|m| m.unsigned_abs() as usize >= from).map(|_| z.norm()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, period: f64) -> Vec<f64> {
        (0..n).map(|j| j as f64 * period / n as f64).collect()
    }

    #[test]
    fn derivative_of_smooth_periodic_function() {
        let period = 3.0;
        let xs = grid(64, period);
        let k = 2.0 * PI / period;
        let f: Vec<f64> = xs.iter().map(|x| (k * x).sin().exp()).collect();
        let df = derivative(&f, period);
        for (x, d) in xs.iter().zip(&df) {
            let exact = k * (k * x).cos() * (k * x).sin().exp();
            assert!((d - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn interpolation_and_shift_agree() {
        let period = 2.0;
        let xs = grid(32, period);
        let k = 2.0 * PI / period;
        let f: Vec<f64> = xs.iter().map(|x| (k * x).cos() + 0.3 * (3.0 * k * x).sin()).collect();
        let c = coefficients(&f);
        let g = shift(&f, period, 0.37);
        for (j, x) in xs.iter().enumerate() {
            assert!((evaluate(&c, period, x + 0.37) - g[j]).abs() < 1e-12);
        }
        assert!((mode(&c, 1).re - 0.5).abs() < 1e-14);
        assert!((mode(&c, -3).im - 0.15).abs() < 1e-14);
    }

    #[test]
    fn resample_is_exact_for_band_limited_data() {
        let period = 1.0;
        let f: Vec<f64> = grid(16, period).iter().map(|x| (2.0 * PI * x).sin()).collect();
        let g = resample(&f, 40);
        for (x, v) in grid(40, period).iter().zip(&g) {
            assert!((v - (2.0 * PI * x).sin()).abs() < 1e-13);
        }
    }
}
