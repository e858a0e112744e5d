//! Fixed-size matrix vocabulary for the 12-state filter.

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen};

use crate::{Error, Result};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Mat3x12 = SMatrix<f64, 3, 12>;
pub type Mat12x3 = SMatrix<f64, 12, 3>;

/// Largest condition number accepted before a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `(A + A^T) / 2`.
#[inline]
pub fn symmetrize<const N: usize>(a: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (a + a.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite 3x3 matrix via Cholesky,
/// rejecting condition numbers above [`MAX_CONDITION`].
pub fn invert_spd3(s: &Matrix3<f64>, context: &'static str) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(*s);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || !max.is_finite() || max / min > MAX_CONDITION {
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        return Err(Error::IllConditioned { context, condition });
    }
    let chol = s.cholesky().ok_or(Error::IllConditioned {
        context,
        condition: max / min,
    })?;
    Ok(chol.inverse())
}

/// Smallest eigenvalue of the symmetric part of a 12x12 matrix.
pub fn min_eigenvalue(a: &Mat12) -> f64 {
    SymmetricEigen::new(symmetrize(a)).eigenvalues.min()
}

/// `||A - A^T||_F / ||A||_F` (0 for the zero matrix).
pub fn asymmetry<const N: usize>(a: &SMatrix<f64, N, N>) -> f64 {
    let n = a.norm();
    if n == 0.0 {
        0.0
    } else {
        (a - a.transpose()).norm() / n
    }
}
