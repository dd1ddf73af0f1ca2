//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted by the checked inverses.
pub const MAX_CONDITION: f64 = 1e12;

/// 2-norm condition number from the singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Moduli of the (possibly complex) eigenvalues of a square matrix.
pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    m.complex_eigenvalues().iter().map(|z| z.norm()).collect()
}

/// LU inverse that refuses matrices whose condition estimate exceeds [`MAX_CONDITION`].
pub fn checked_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { context, condition });
    }
    m.clone().lu().try_inverse().ok_or(Error::IllConditioned { context, condition })
}

/// LU solve `m x = b` with the same conditioning guard as [`checked_inverse`].
pub fn checked_solve(m: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    checked_solve_cond(m, b, context, MAX_CONDITION)
}

/// LU solve with an explicit condition limit.
pub fn checked_solve_cond(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    context: &'static str,
    limit: f64,
) -> Result<DVector<f64>> {
    let condition = condition_number(m);
    if !(condition <= limit) {
        return Err(Error::IllConditioned { context, condition });
    }
    m.clone().lu().solve(b).ok_or(Error::IllConditioned { context, condition })
}

/// Outer product `a bᵀ`.
pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}
