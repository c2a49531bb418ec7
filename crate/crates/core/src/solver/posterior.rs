//! E-step: Gaussian posterior of `X` given the hyperparameters.
//!
//! Two routes compute the same quantity. [`posterior_dense`] assembles the full
//! `NL x NL` precision `lambda (I_L ⊗ PhiᵀPhi) + B2 ⊗ B1` and inverts it.
//! [`posterior_fast`] rotates the columns by the eigenvectors of `B2`, which
//! block-diagonalises the precision into `L` independent `N x N` systems
//! `lambda PhiᵀPhi + d_l B1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{build_row_precision, Hyperparameters, PosteriorStats, ProblemInstance, DEFAULT_JITTER};

fn check_inputs(inst: &ProblemInstance, hyper: &Hyperparameters) -> Result<DVector<f64>> {
    hyper.validate(inst.n(), inst.l())?;
    build_row_precision(&hyper.alpha, hyper.beta)
}

/// Reference E-step on the full Kronecker-structured precision.
pub fn posterior_dense(inst: &ProblemInstance, hyper: &Hyperparameters) -> Result<PosteriorStats> {
    let b1 = check_inputs(inst, hyper)?;
    let (n, l) = (inst.n(), inst.l());
    let nl = n * l;
    let gram = inst.phi().transpose() * inst.phi();
    let lambda = hyper.lambda;

    let precision = DMatrix::from_fn(nl, nl, |r, c| {
        let (i, l1) = (r % n, r / n);
        let (j, l2) = (c % n, c / n);
        let mut v = if l1 == l2 { lambda * gram[(i, j)] } else { 0.0 };
        if i == j {
            v += hyper.b2[(l1, l2)] * b1[i];
        }
        v
    });
    let chol = linalg::cholesky_jittered(precision, DEFAULT_JITTER, "posterior precision")?;
    let sigma = chol.inverse();

    let rhs = inst.phi().transpose() * inst.y();
    let rhs_vec = DVector::from_column_slice(rhs.as_slice());
    let mu = &sigma * rhs_vec * lambda;
    let mean = DMatrix::from_column_slice(n, l, mu.as_slice());

    let row_cov = (0..n)
        .map(|i| {
            let mut block = DMatrix::from_fn(l, l, |a, b| sigma[(i + a * n, i + b * n)]);
            linalg::symmetrize(&mut block);
            block
        })
        .collect();

    let mut residual_trace = 0.0;
    for blk in 0..l {
        let off = blk * n;
        for i in 0..n {
            for j in 0..n {
                residual_trace += gram[(i, j)] * sigma[(off + j, off + i)];
            }
        }
    }

    Ok(PosteriorStats {
        mean,
        row_cov,
        residual_trace: residual_trace.max(0.0),
    })
}

/// One rotated subsystem: posterior diagonal, mean and `tr(PhiᵀPhi C)` for the
/// precision `lambda PhiᵀPhi + scale * diag(b1)`.
struct Subsystem {
    mean: DVector<f64>,
    diag: DVector<f64>,
    trace: f64,
}

fn solve_subsystem(phi: &DMatrix<f64>, b1: &DVector<f64>, scale: f64, lambda: f64, y: &DVector<f64>) -> Result<Subsystem> {
    let (m, n) = phi.shape();
    if m < n {
        // Covariance form: C = G - G Phiᵀ S⁻¹ Phi G with G = (scale B1)⁻¹ and
        // S = I/lambda + Phi G Phiᵀ, only an M x M factorization.
        let gamma = b1.map(|b| 1.0 / (scale * b));
        let phi_g = DMatrix::from_fn(m, n, |r, c| phi[(r, c)] * gamma[c]);
        let mut s = &phi_g * phi.transpose();
        for i in 0..m {
            s[(i, i)] += 1.0 / lambda;
        }
        linalg::symmetrize(&mut s);
        let chol = linalg::cholesky_jittered(s, DEFAULT_JITTER, "measurement-space covariance")?;
        let v = chol.solve(&phi_g);
        let mean = v.transpose() * y;
        let diag = DVector::from_fn(n, |i, _| {
            let reduction: f64 = phi_g.column(i).dot(&v.column(i));
            (gamma[i] - reduction).max(0.0)
        });
        // tr(PhiᵀPhi C) = tr(Phi C Phiᵀ) = tr(K S⁻¹) / lambda with K = Phi G Phiᵀ.
        let k_sinv = v * phi.transpose();
        let trace = k_sinv.trace() / lambda;
        Ok(Subsystem { mean, diag, trace })
    } else {
        let gram = phi.transpose() * phi;
        let mut a = &gram * lambda;
        for i in 0..n {
            a[(i, i)] += scale * b1[i];
        }
        let chol = linalg::cholesky_jittered(a, DEFAULT_JITTER, "row-space precision")?;
        let c = chol.inverse();
        let mean = &c * (phi.transpose() * y) * lambda;
        let diag = c.diagonal().map(|v| v.max(0.0));
        let trace = (&gram * &c).trace();
        Ok(Subsystem { mean, diag, trace })
    }
}

/// E-step through the eigendecomposition `B2 = U diag(d) Uᵀ`.
pub fn posterior_fast(inst: &ProblemInstance, hyper: &Hyperparameters) -> Result<PosteriorStats> {
    let b1 = check_inputs(inst, hyper)?;
    let (n, l) = (inst.n(), inst.l());

    let eig = hyper.b2.clone().symmetric_eigen();
    if let Some(d) = eig.eigenvalues.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::numerical(format!("B2 eigenvalue {d} is not positive")));
    }
    let u = &eig.eigenvectors;
    let y_rot = inst.y() * u;

    let mut mean_rot = DMatrix::zeros(n, l);
    let mut diags = Vec::with_capacity(l);
    let mut residual_trace = 0.0;
    for col in 0..l {
        let sub = solve_subsystem(
            inst.phi(),
            &b1,
            eig.eigenvalues[col],
            hyper.lambda,
            &y_rot.column(col).into_owned(),
        )?;
        mean_rot.set_column(col, &sub.mean);
        residual_trace += sub.trace;
        diags.push(sub.diag);
    }

    let mean = mean_rot * u.transpose();
    let row_cov = (0..n)
        .map(|i| {
            DMatrix::from_fn(l, l, |a, b| (0..l).map(|k| u[(a, k)] * u[(b, k)] * diags[k][i]).sum())
        })
        .collect();

    Ok(PosteriorStats {
        mean,
        row_cov,
        residual_trace: residual_trace.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_instance() -> (ProblemInstance, Hyperparameters) {
        let inst = ProblemInstance::new(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            None,
        )
        .unwrap();
        (inst, Hyperparameters::initial(1, 1, 1.0, 0.0, 1.0))
    }

    #[test]
    fn scalar_posterior_dense() {
        let (inst, hyper) = scalar_instance();
        let s = posterior_dense(&inst, &hyper).unwrap();
        assert!((s.mean[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.row_cov[0][(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.residual_trace - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scalar_posterior_fast() {
        let (inst, hyper) = scalar_instance();
        let s = posterior_fast(&inst, &hyper).unwrap();
        assert!((s.mean[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.row_cov[0][(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.residual_trace - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gives_zero_mean() {
        let phi = DMatrix::from_fn(3, 5, |r, c| ((r * 5 + c) as f64 * 0.37).sin());
        let inst = ProblemInstance::new(phi, DMatrix::zeros(3, 2), None).unwrap();
        let mut hyper = Hyperparameters::initial(5, 2, 0.7, 1.0, 3.0);
        hyper.b2 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        for s in [posterior_dense(&inst, &hyper).unwrap(), posterior_fast(&inst, &hyper).unwrap()] {
            assert!(s.mean.amax() == 0.0);
        }
    }

    #[test]
    fn identity_b2_decouples_columns() {
        let phi = DMatrix::from_fn(3, 6, |r, c| ((r * 7 + c * 3) as f64 * 0.53).cos());
        let y = DMatrix::from_fn(3, 2, |r, c| (r as f64 + 1.0) * if c == 0 { 1.0 } else { -0.4 });
        let inst = ProblemInstance::new(phi.clone(), y.clone(), None).unwrap();
        let mut hyper = Hyperparameters::initial(6, 2, 1.0, 0.5, 4.0);
        hyper.alpha = DVector::from_fn(6, |i, _| 0.5 + i as f64);
        let joint = posterior_fast(&inst, &hyper).unwrap();
        for col in 0..2 {
            let single = ProblemInstance::new(phi.clone(), y.columns(col, 1).into_owned(), None).unwrap();
            let mut h1 = hyper.clone();
            h1.b2 = DMatrix::identity(1, 1);
            let s = posterior_fast(&single, &h1).unwrap();
            for i in 0..6 {
                assert!((s.mean[(i, 0)] - joint.mean[(i, col)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn overdetermined_branch_matches_dense() {
        let phi = DMatrix::from_fn(6, 4, |r, c| ((r * 4 + c) as f64 * 0.91).sin() + if r == c { 1.0 } else { 0.0 });
        let y = DMatrix::from_fn(6, 2, |r, c| ((r + 2 * c) as f64 * 0.3).cos());
        let inst = ProblemInstance::new(phi, y, None).unwrap();
        let mut hyper = Hyperparameters::initial(4, 2, 1.3, 0.5, 2.0);
        hyper.b2 = DMatrix::from_row_slice(2, 2, &[1.5, -0.4, -0.4, 0.8]);
        let a = posterior_fast(&inst, &hyper).unwrap();
        let b = posterior_dense(&inst, &hyper).unwrap();
        assert!((a.mean - b.mean).amax() < 1e-10);
        assert!((a.residual_trace - b.residual_trace).abs() < 1e-10);
        for (x, y) in a.row_cov.iter().zip(&b.row_cov) {
            assert!((x - y).amax() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let (inst, mut hyper) = scalar_instance();
        hyper.lambda = -1.0;
        assert!(posterior_fast(&inst, &hyper).is_err());
        assert!(posterior_dense(&inst, &hyper).is_err());
    }
}
