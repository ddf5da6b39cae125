//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

use crate::error::{QreError, Result};

const EIGEN_MAX_ITERS: usize = 10_000;
const SVD_MAX_ITERS: usize = 10_000;

pub fn symmetric_part(c: &DMatrix<f64>) -> DMatrix<f64> {
    (c + c.transpose()) * 0.5
}

pub fn skew_part(c: &DMatrix<f64>) -> DMatrix<f64> {
    (c - c.transpose()) * 0.5
}

pub fn symmetric_eigen(s: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(s.clone(), f64::EPSILON, EIGEN_MAX_ITERS)
        .ok_or(QreError::EigendecompositionFailure)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    if s.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = symmetric_eigen(s)?;
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Nearest positive semidefinite matrix to a symmetric `s` in Frobenius norm.
pub fn project_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut eig = symmetric_eigen(s)?;
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    let out = eig.recompose();
    // recompose is symmetric only up to round-off
    Ok(symmetric_part(&out))
}

/// Moore-Penrose pseudoinverse; singular values below `rel_cutoff * sigma_max` are dropped.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_cutoff: f64) -> Result<DMatrix<f64>> {
    let svd = SVD::try_new(a.clone(), true, true, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or(QreError::DecompositionFailure)?;
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_cutoff * sigma_max;
    let u = svd.u.as_ref().ok_or(QreError::DecompositionFailure)?;
    let v_t = svd.v_t.as_ref().ok_or(QreError::DecompositionFailure)?;
    let k = svd.singular_values.len();
    let mut scaled_ut = u.transpose();
    for i in 0..k {
        let s = svd.singular_values[i];
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        scaled_ut.row_mut(i).scale_mut(inv);
    }
    Ok(v_t.transpose() * scaled_ut)
}

/// 2-norm condition number; infinite for singular matrices.
pub fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    let svd = SVD::try_new(a.clone(), false, false, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or(QreError::DecompositionFailure)?;
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(if min > 0.0 { max / min } else { f64::INFINITY })
}

pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
