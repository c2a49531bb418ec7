//! Conventional MSBL baseline: independent row variances `gamma_i`, identity
//! column covariance, no neighbour coupling. EM updates in the `M x M`
//! (measurement-space) form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Hyperparameters, LambdaInit, ProblemInstance, DEFAULT_ALPHA_MAX, DEFAULT_JITTER, DEFAULT_LAMBDA_MAX};
use crate::solver::{relative_change, IterationTrace, SolverReport};

#[derive(Debug, Clone, PartialEq)]
pub struct MsblConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Rows whose `gamma_i` falls below this are pruned to exactly zero.
    pub gamma_floor: f64,
    pub noise_learning: bool,
    pub lambda_init: LambdaInit,
    pub lambda_max: f64,
}

impl Default for MsblConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-6,
            gamma_floor: 1e-10,
            noise_learning: true,
            lambda_init: LambdaInit::Auto,
            lambda_max: DEFAULT_LAMBDA_MAX,
        }
    }
}

impl MsblConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0 && self.gamma_floor > 0.0 && self.lambda_max > 0.0) {
            return Err(Error::invalid("tol, gamma_floor and lambda_max must be positive"));
        }
        if let LambdaInit::Fixed(v) = self.lambda_init {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("lambda_init must be positive"));
            }
        }
        Ok(())
    }
}

/// Posterior shared by all columns under the MSBL prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MsblPosterior {
    /// `N x L` posterior mean.
    pub mean: DMatrix<f64>,
    /// Diagonal of the common `N x N` posterior covariance.
    pub cov_diag: DVector<f64>,
    /// `tr(Phi Sigma Phiᵀ)` for a single column.
    pub fit_trace: f64,
}

/// `Sigma = G - G Phiᵀ (I/lambda + Phi G Phiᵀ)^{-1} Phi G`, `mean = lambda Sigma Phiᵀ Y`.
pub fn msbl_posterior(inst: &ProblemInstance, gamma: &DVector<f64>, lambda: f64) -> Result<MsblPosterior> {
    let (m, n) = (inst.m(), inst.n());
    if gamma.len() != n || gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::invalid("gamma must hold N nonnegative finite entries"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda must be positive"));
    }
    let phi = inst.phi();
    let mut phi_g = phi.clone();
    for (c, g) in gamma.iter().enumerate() {
        phi_g.column_mut(c).scale_mut(*g);
    }
    let mut s = &phi_g * phi.transpose();
    for i in 0..m {
        s[(i, i)] += 1.0 / lambda;
    }
    linalg::symmetrize(&mut s);
    let chol = linalg::cholesky_jittered(s, DEFAULT_JITTER, "MSBL measurement covariance")?;
    // v = S⁻¹ Phi G, so mean = vᵀ Y and Sigma_ii = g_i - (Phi G)_iᵀ v_i.
    let v = chol.solve(&phi_g);
    let mean = v.transpose() * inst.y();
    let cov_diag = DVector::from_fn(n, |i, _| (gamma[i] - phi_g.column(i).dot(&v.column(i))).max(0.0));
    let fit_trace = (v * phi.transpose()).trace() / lambda;
    Ok(MsblPosterior {
        mean,
        cov_diag,
        fit_trace,
    })
}

pub fn run_msbl(inst: &ProblemInstance, cfg: &MsblConfig) -> Result<SolverReport> {
    cfg.validate()?;
    let (m, n, l) = (inst.m(), inst.n(), inst.l());
    let mut lambda = cfg.lambda_init.resolve(inst.y()).min(cfg.lambda_max);
    let mut gamma = DVector::from_element(n, 1.0);
    let mut post = msbl_posterior(inst, &gamma, lambda).map_err(|e| e.at_iteration(0))?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        for i in 0..n {
            if gamma[i] == 0.0 {
                continue;
            }
            let row_energy = post.mean.row(i).norm_squared() / l as f64;
            let g = row_energy + post.cov_diag[i];
            gamma[i] = if g < cfg.gamma_floor { 0.0 } else { g };
        }
        if cfg.noise_learning {
            let resid = linalg::frobenius_sq(&(inst.y() - inst.phi() * &post.mean));
            let expected = resid + l as f64 * post.fit_trace;
            lambda = crate::solver::lambda_from_residual(expected, m * l, cfg.lambda_max);
        }
        let next = msbl_posterior(inst, &gamma, lambda).map_err(|e| e.at_iteration(t))?;
        let rel_change = relative_change(&next.mean, &post.mean);
        post = next;
        iterations = t;
        let active = gamma.iter().filter(|g| **g > 0.0);
        let (gmin, gmax) = active.fold((f64::INFINITY, 0.0_f64), |(lo, hi), g| (lo.min(*g), hi.max(*g)));
        trace.push(IterationTrace {
            rel_change,
            lambda,
            alpha_min: if gmax > 0.0 { 1.0 / gmax } else { DEFAULT_ALPHA_MAX },
            alpha_max: if gmin.is_finite() { (1.0 / gmin).min(DEFAULT_ALPHA_MAX) } else { DEFAULT_ALPHA_MAX },
        });
        if rel_change < cfg.tol {
            converged = true;
            break;
        }
    }

    let mut x_hat = post.mean;
    for i in 0..n {
        if gamma[i] == 0.0 {
            x_hat.row_mut(i).fill(0.0);
        }
    }
    let alpha = gamma.map(|g| if g > 0.0 { (1.0 / g).min(DEFAULT_ALPHA_MAX) } else { DEFAULT_ALPHA_MAX });
    Ok(SolverReport {
        x_hat,
        hyper: Hyperparameters {
            alpha,
            beta: 0.0,
            b2: DMatrix::identity(l, l),
            lambda,
        },
        iterations,
        converged,
        trace,
    })
}
