//! Small dense helpers on top of nalgebra shared by the solvers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Cholesky factor of a symmetric positive-definite matrix. On breakdown a
/// diagonal load of `jitter * mean(diag)` is added once before giving up.
pub(crate) fn cholesky_jittered(
    mat: DMatrix<f64>,
    jitter: f64,
    what: &str,
) -> Result<Cholesky<f64, Dyn>> {
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(format!("{what}: non-finite entry")));
    }
    let n = mat.nrows();
    let scale = (mat.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    match mat.clone().cholesky() {
        Some(c) => Ok(c),
        None => {
            let mut loaded = mat;
            for i in 0..n {
                loaded[(i, i)] += jitter * scale;
            }
            loaded
                .cholesky()
                .ok_or_else(|| Error::numerical(format!("{what}: not positive definite after jitter")))
        }
    }
}

pub(crate) fn symmetrize(mat: &mut DMatrix<f64>) {
    let n = mat.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
}

/// Log-determinant of an SPD matrix via its Cholesky factor.
pub(crate) fn log_det_spd(mat: &DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Symmetric within `rel` of its largest entry magnitude.
pub(crate) fn is_symmetric(mat: &DMatrix<f64>, rel: f64) -> bool {
    if !mat.is_square() {
        return false;
    }
    let scale = mat.amax().max(f64::MIN_POSITIVE);
    let n = mat.nrows();
    (0..n).all(|i| (0..i).all(|j| (mat[(i, j)] - mat[(j, i)]).abs() <= rel * scale))
}

pub(crate) fn frobenius_sq(mat: &DMatrix<f64>) -> f64 {
    mat.iter().map(|v| v * v).sum()
}
