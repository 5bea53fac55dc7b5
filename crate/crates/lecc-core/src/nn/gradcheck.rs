//! Finite-difference gradient verification.
//!
//! The checker never inspects backward-pass internals: it re-evaluates a
//! caller-supplied loss closure at perturbed points and compares the central
//! difference against the analytic value. Run it in f64; the default step is
//! too small for f32 evaluation.

use super::matrix::Matrix;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Symmetric relative error, safe near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Central finite difference of `loss` with respect to entry `(i, j)` of a
/// matrix the closure reads. The closure receives the perturbed matrix.
pub fn central_difference(
    loss: &mut dyn FnMut(&Matrix<f64>) -> f64,
    at: &Matrix<f64>,
    i: usize,
    j: usize,
    h: f64,
) -> f64 {
    let mut plus = at.clone();
    plus.set(i, j, plus.get(i, j) + h);
    let mut minus = at.clone();
    minus.set(i, j, minus.get(i, j) - h);
    (loss(&plus) - loss(&minus)) / (2.0 * h)
}

/// Compares analytic gradients against central differences on the listed
/// entries; returns the worst relative error observed.
pub fn max_relative_error(
    loss: &mut dyn FnMut(&Matrix<f64>) -> f64,
    at: &Matrix<f64>,
    analytic: &Matrix<f64>,
    entries: &[(usize, usize)],
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &(i, j) in entries {
        let numeric = central_difference(loss, at, i, j, h);
        let err = relative_error(analytic.get(i, j), numeric);
        if err > worst {
            worst = err;
        }
    }
    worst
}

/// Deterministic spread of entry coordinates covering corners and interior.
pub fn sample_entries(rows: usize, cols: usize, want: usize) -> Vec<(usize, usize)> {
    let total = rows * cols;
    let n = want.min(total).max(1);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let flat = k * total / n;
        out.push((flat / cols, flat % cols));
    }
    out
}
