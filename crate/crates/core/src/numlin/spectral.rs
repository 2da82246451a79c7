//! Perron root and Perron vectors of nonnegative matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Perron root with nonnegative right/left vectors, each normalized to unit
/// 1-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerronResult {
    pub radius: f64,
    pub right_vector: Vec<f64>,
    pub left_vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PerronResult {
    /// `leftᵀ right`; near zero when the Perron vectors are not usable for
    /// eigenvalue sensitivities (reducible matrix, split root).
    pub fn overlap(&self) -> f64 {
        dot(&self.left_vector, &self.right_vector)
    }
}

/// Spectral radius of a nonnegative square matrix by shifted power iteration.
///
/// The iteration runs on `A + cI` with `c` tracking the current radius
/// estimate; for nonnegative `A` the Perron root stays the unique dominant
/// eigenvalue of the shifted matrix, so periodic (imprimitive) matrices still
/// converge. If the residual tolerance is not met within `max_iter`, the full
/// spectrum is computed by Hessenberg QR and its maximum modulus is reported.
pub fn spectral_radius(a: &DenseMatrix, tol: f64, max_iter: usize) -> Result<PerronResult> {
    if !a.is_square() {
        return Err(Error::Shape(format!(
            "spectral radius needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("spectral radius argument".into()));
    }
    if let Some(pos) = a.as_slice().iter().position(|&x| x < 0.0) {
        let n = a.cols();
        return Err(Error::NegativeEntry(format!(
            "entry ({}, {}) = {}",
            pos / n,
            pos % n,
            a.as_slice()[pos]
        )));
    }
    let n = a.rows();
    if n == 1 {
        return Ok(PerronResult {
            radius: a[(0, 0)],
            right_vector: vec![1.0],
            left_vector: vec![1.0],
            iterations: 0,
            converged: true,
        });
    }
    if a.max_abs() == 0.0 {
        let uniform = vec![1.0 / n as f64; n];
        return Ok(PerronResult {
            radius: 0.0,
            right_vector: uniform.clone(),
            left_vector: uniform,
            iterations: 0,
            converged: true,
        });
    }

    let at = a.transpose();
    let right = power_iterate(a, tol, max_iter);
    let left = power_iterate(&at, tol, max_iter);
    let iterations = right.iterations.max(left.iterations);

    if right.converged && left.converged {
        let overlap = dot(&left.vector, &right.vector);
        let radius = if overlap > 1e-8 {
            let ax = a.mul_vec(&right.vector);
            dot(&left.vector, &ax) / overlap
        } else {
            right.estimate
        };
        return Ok(PerronResult {
            radius,
            right_vector: right.vector,
            left_vector: left.vector,
            iterations,
            converged: true,
        });
    }

    // Split or defective Perron root: fall back to the full spectrum.
    let (radius, converged) = match max_modulus_eigenvalue(a) {
        Some(r) => (r, true),
        None => (right.estimate, false),
    };
    Ok(PerronResult {
        radius,
        right_vector: right.vector,
        left_vector: left.vector,
        iterations,
        converged,
    })
}

/// Same as [`spectral_radius`] with the default tolerance and iteration cap.
pub fn perron(a: &DenseMatrix) -> Result<PerronResult> {
    spectral_radius(a, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

struct PowerOutcome {
    vector: Vec<f64>,
    estimate: f64,
    iterations: usize,
    converged: bool,
}

fn power_iterate(a: &DenseMatrix, tol: f64, max_iter: usize) -> PowerOutcome {
    let n = a.rows();
    let row_sums: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let lo = row_sums.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = row_sums.iter().copied().fold(0.0, f64::max);
    // The Perron root lies in [lo, hi].
    let mut shift = 0.5 * (lo + hi);

    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = 0.0;
    for it in 0..max_iter {
        let y = a.mul_vec(&x);
        estimate = y.iter().sum::<f64>();
        let residual: f64 = y.iter().zip(&x).map(|(yi, xi)| (yi - estimate * xi).abs()).sum();
        // quarter tolerance leaves room for the final Rayleigh-quotient radius
        if residual <= 0.25 * tol * estimate {
            return PowerOutcome {
                vector: x,
                estimate,
                iterations: it,
                converged: true,
            };
        }
        if it >= 4 && estimate > 0.0 {
            shift = estimate;
        }
        let total = estimate + shift;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = (yi + shift * *xi) / total;
        }
    }
    PowerOutcome {
        vector: x,
        estimate,
        iterations: max_iter,
        converged: false,
    }
}

fn max_modulus_eigenvalue(a: &DenseMatrix) -> Option<f64> {
    let n = a.rows();
    let m = DMatrix::from_row_slice(n, n, a.as_slice());
    let schur = m.try_schur(f64::EPSILON, 100_000)?;
    schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |m| m.max(r))))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
