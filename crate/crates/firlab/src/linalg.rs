//! Dense linear algebra: SVD, Moore-Penrose pseudo-inverse, operator norm
//! and the sample covariance matrix.
//!
//! The SVD is nalgebra's two-phase dense routine (bidiagonalization plus
//! implicit QR iteration); everything else is built on top of it so the
//! rank decision is made in exactly one place.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::fir::DesignMatrix;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("SVD iteration failed to converge")]
    NoConvergence,

    #[error("relative tolerance must lie in (0, 1), got {0}")]
    InvalidTolerance(f64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Thin SVD `A = U diag(s) V^T` with singular values sorted descending.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.singular_values) * &self.v_t
    }

    /// Number of singular values above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s_max = self.singular_values.max();
        self.singular_values
            .iter()
            .filter(|&&s| s > rel_tol * s_max)
            .count()
    }

    /// Minimum-norm solution of `A x = b`, truncating singular values
    /// below `rel_tol * s_max`.
    pub fn solve_min_norm(&self, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
        let s_max = self.singular_values.max();
        let mut coeffs = self.u.tr_mul(b);
        for (i, c) in coeffs.iter_mut().enumerate() {
            let s = self.singular_values[i];
            *c = if s > rel_tol * s_max { *c / s } else { 0.0 };
        }
        self.v_t.tr_mul(&coeffs)
    }

    /// Moore-Penrose pseudo-inverse with the same truncation rule.
    pub fn pseudo_inverse(&self, rel_tol: f64) -> DMatrix<f64> {
        let s_max = self.singular_values.max();
        let inv = DVector::from_fn(self.singular_values.len(), |i, _| {
            let s = self.singular_values[i];
            if s > rel_tol * s_max {
                1.0 / s
            } else {
                0.0
            }
        });
        self.v_t.tr_mul(&(DMatrix::from_diagonal(&inv) * &self.u.transpose()))
    }
}

/// Default truncation threshold: `max(N, T) * machine epsilon`,
/// relative to the largest singular value.
pub fn default_rel_tol(nrows: usize, ncols: usize) -> f64 {
    nrows.max(ncols) as f64 * f64::EPSILON
}

fn check_finite(a: &DMatrix<f64>) -> Result<(), LinalgError> {
    for col in 0..a.ncols() {
        for row in 0..a.nrows() {
            if !a[(row, col)].is_finite() {
                return Err(LinalgError::NonFinite { row, col });
            }
        }
    }
    Ok(())
}

/// Thin SVD with singular values sorted descending.
pub fn svd(a: &DMatrix<f64>) -> Result<SvdResult, LinalgError> {
    check_finite(a)?;
    let decomp = a.clone().try_svd(true, true, f64::EPSILON, 0);
    let decomp = decomp.ok_or(LinalgError::NoConvergence)?;
    let mut result = SvdResult {
        u: decomp.u.expect("u requested"),
        singular_values: decomp.singular_values,
        v_t: decomp.v_t.expect("v_t requested"),
    };
    sort_descending(&mut result);
    Ok(result)
}

fn sort_descending(svd: &mut SvdResult) {
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("finite singular values")
    });
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return;
    }
    let u = svd.u.clone();
    let vt = svd.v_t.clone();
    let s = svd.singular_values.clone();
    for (new, &old) in order.iter().enumerate() {
        svd.singular_values[new] = s[old];
        svd.u.set_column(new, &u.column(old));
        svd.v_t.set_row(new, &vt.row(old));
    }
}

/// Moore-Penrose pseudo-inverse. `rel_tol` defaults to
/// `max(N, T) * machine epsilon`.
pub fn pseudo_inverse(
    a: &DMatrix<f64>,
    rel_tol: Option<f64>,
) -> Result<DMatrix<f64>, LinalgError> {
    let tol = match rel_tol {
        Some(t) if t <= 0.0 || t >= 1.0 => return Err(LinalgError::InvalidTolerance(t)),
        Some(t) => t,
        None => default_rel_tol(a.nrows(), a.ncols()),
    };
    Ok(svd(a)?.pseudo_inverse(tol))
}

/// Largest singular value. NaN entries make the result NaN.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    match svd(a) {
        Ok(s) => s.singular_values.max(),
        Err(_) => f64::NAN,
    }
}

/// The sample covariance `X^T X / N`. Symmetric by construction.
pub fn sample_covariance(x: &DesignMatrix) -> DMatrix<f64> {
    let n = x.rows() as f64;
    x.matrix().tr_mul(x.matrix()) / n
}

/// Eigenvalues of the sample covariance built from the design's singular
/// values, padded with zeros when the rank is deficient: the extremes
/// bound the spectrum deviation `|Sigma_hat - I|`.
pub fn covariance_spectrum(x_svd: &SvdResult, t: usize, n: usize) -> Vec<f64> {
    let mut eigs: Vec<f64> = x_svd
        .singular_values
        .iter()
        .map(|s| s * s / n as f64)
        .collect();
    eigs.resize(t, 0.0);
    eigs
}
