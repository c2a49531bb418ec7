//! M-step updates for `alpha`, `B2` and `lambda`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{build_row_precision, PosteriorStats, ProblemInstance, ALPHA_MIN};

/// `Omega_i = mu_i mu_iᵀ + Sigma_i` for every row.
pub fn row_second_moments(stats: &PosteriorStats) -> Vec<DMatrix<f64>> {
    stats
        .row_cov
        .iter()
        .enumerate()
        .map(|(i, cov)| {
            let mu = stats.mean.row(i).transpose();
            &mu * mu.transpose() + cov
        })
        .collect()
}

/// `phi_i = (tr(B2 Omega_i) + beta tr(B2 Omega_{i-1}) + beta tr(B2 Omega_{i+1})) / 2`
/// with zero moments past either end.
pub fn phi_values(omegas: &[DMatrix<f64>], b2: &DMatrix<f64>, beta: f64) -> DVector<f64> {
    let traces: Vec<f64> = omegas.iter().map(|o| b2.component_mul(o).sum()).collect();
    let n = traces.len();
    DVector::from_fn(n, |i, _| {
        let left = if i > 0 { traces[i - 1] } else { 0.0 };
        let right = if i + 1 < n { traces[i + 1] } else { 0.0 };
        0.5 * (traces[i] + beta * (left + right))
    })
}

/// Upper end of the feasible interval for `alpha_i`: `3L / (2 phi_i)`, before clamping.
pub fn alpha_from_phi(phi: f64, l: usize) -> f64 {
    3.0 * l as f64 / (2.0 * phi)
}

pub fn update_alpha(
    omegas: &[DMatrix<f64>],
    b2: &DMatrix<f64>,
    beta: f64,
    l: usize,
    alpha_max: f64,
) -> DVector<f64> {
    phi_values(omegas, b2, beta).map(|phi| {
        if phi > 0.0 && phi.is_finite() {
            alpha_from_phi(phi, l).clamp(ALPHA_MIN, alpha_max)
        } else {
            // row detected as exactly zero
            alpha_max
        }
    })
}

/// Stationary point of the `B2` part of the Q-function,
/// `((1/N) sum_i b_i Omega_i)^{-1}`, before trace normalisation.
pub fn b2_stationary_point(
    omegas: &[DMatrix<f64>],
    alpha: &DVector<f64>,
    beta: f64,
    jitter: f64,
) -> Result<DMatrix<f64>> {
    let n = omegas.len();
    if n == 0 || alpha.len() != n {
        return Err(Error::invalid("need one second moment per alpha entry"));
    }
    let l = omegas[0].nrows();
    let b1 = build_row_precision(alpha, beta)?;
    let mut s = DMatrix::zeros(l, l);
    for (b, omega) in b1.iter().zip(omegas) {
        s += omega * *b;
    }
    s /= n as f64;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("B2 scatter matrix is not finite"));
    }
    linalg::symmetrize(&mut s);
    let load = jitter * s.trace() / l as f64;
    for i in 0..l {
        s[(i, i)] += load;
    }
    let mut inv = linalg::cholesky_jittered(s, jitter, "B2 scatter matrix")?.inverse();
    linalg::symmetrize(&mut inv);
    Ok(inv)
}

/// Factor `c` with `tr(c * b2) = L`.
pub fn trace_normalizer(b2: &DMatrix<f64>) -> Result<f64> {
    let tr = b2.trace();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::numerical(format!("B2 trace {tr} cannot be normalised")));
    }
    Ok(b2.nrows() as f64 / tr)
}

/// `B2` update rescaled so that `tr(B2) = L`.
pub fn update_b2(omegas: &[DMatrix<f64>], alpha: &DVector<f64>, beta: f64, jitter: f64) -> Result<DMatrix<f64>> {
    let b2 = b2_stationary_point(omegas, alpha, beta, jitter)?;
    let c = trace_normalizer(&b2)?;
    Ok(b2 * c)
}

/// Expected squared residual `||Y - Phi mean||_F^2 + tr((I ⊗ PhiᵀPhi) Sigma)`.
pub fn expected_residual(inst: &ProblemInstance, stats: &PosteriorStats) -> f64 {
    let resid = inst.y() - inst.phi() * &stats.mean;
    linalg::frobenius_sq(&resid) + stats.residual_trace
}

/// `lambda = ML / <||Y - Phi X||_F^2>`, clamped to `(0, lambda_max]`.
pub fn update_lambda(inst: &ProblemInstance, stats: &PosteriorStats, lambda_max: f64) -> f64 {
    lambda_from_residual(expected_residual(inst, stats), inst.m() * inst.l(), lambda_max)
}

pub(crate) fn lambda_from_residual(expected: f64, ml: usize, lambda_max: f64) -> f64 {
    if !(expected > 0.0) {
        return lambda_max;
    }
    (ml as f64 / expected).min(lambda_max)
}
