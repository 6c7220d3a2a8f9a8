use nalgebra::{DMatrix, DVector};

use crate::error::SensingError;

/// Largest `|M_ij - M_ji|`.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..j {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// The matrix must be symmetric to `1e-9 * max(1, max|M_ij|)`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64, SensingError> {
    if m.nrows() != m.ncols() {
        return Err(SensingError::NotSquare(m.nrows(), m.ncols()));
    }
    if m.is_empty() {
        return Ok(f64::INFINITY);
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > 1e-9 * scale {
        return Err(SensingError::Asymmetric(asym));
    }
    Ok(min_eigenvalue_unchecked(m))
}

/// [`min_eigenvalue`] without the symmetry check; only the lower triangle is read.
pub(crate) fn min_eigenvalue_unchecked(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues().min()
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub(crate) fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}
