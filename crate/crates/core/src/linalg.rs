//! Thin helpers over faer for the small dense systems used throughout.

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result};

pub(crate) fn solve(a: &Mat<f64>, b: &[f64]) -> Vec<f64> {
    let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
    let x = a.partial_piv_lu().solve(&rhs);
    (0..b.len()).map(|i| x[(i, 0)]).collect()
}

/// Singular values in nonincreasing order.
pub(crate) fn singular_values(a: &Mat<f64>) -> Result<Vec<f64>> {
    a.singular_values().map_err(|e| Error::Eigensolver(format!("{e:?}")))
}

/// Right singular vector of the smallest singular value.
pub(crate) fn null_vector(a: &Mat<f64>) -> Result<Vec<f64>> {
    let svd = a.svd().map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let v = svd.V();
    let last = v.ncols() - 1;
    Ok((0..v.nrows()).map(|i| v[(i, last)]).collect())
}

/// Copy of `a` with every column scaled to unit max norm.
pub(crate) fn equilibrate_columns(a: &Mat<f64>) -> Mat<f64> {
    let scale: Vec<f64> = (0..a.ncols())
        .map(|j| {
            let m = (0..a.nrows()).fold(0.0f64, |m, i| m.max(a[(i, j)].abs()));
            if m > 0.0 { 1.0 / m } else { 1.0 }
        })
        .collect();
    Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * scale[j])
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
