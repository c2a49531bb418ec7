//! Pattern-coupled sparse Bayesian learning for multiple measurement vectors.
//!
//! Each iteration runs the M-step (`alpha`, then `B2`, then `lambda`) on the
//! current posterior and then refreshes the posterior. The posterior at the raw
//! initialization is computed once before the loop.

mod posterior;
mod updates;

pub use posterior::{posterior_dense, posterior_fast};
pub use updates::{
    alpha_from_phi, b2_stationary_point, expected_residual, phi_values, row_second_moments, trace_normalizer,
    update_alpha, update_b2, update_lambda,
};

pub(crate) use updates::lambda_from_residual;

use nalgebra::DMatrix;

use crate::error::Result;
use crate::model::{ALPHA_MIN, Hyperparameters, PosteriorPath, PosteriorStats, ProblemInstance, SolverConfig};

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    pub rel_change: f64,
    pub lambda: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub x_hat: DMatrix<f64>,
    pub hyper: Hyperparameters,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationTrace>,
}

/// `||new - old||_F / max(||old||_F, 1e-12)`.
pub(crate) fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    (new - old).norm() / old.norm().max(1e-12)
}

/// E-step following the configured path. The fast path falls back to the dense
/// one on failure when `N * L` is within the cutoff.
pub fn posterior(inst: &ProblemInstance, hyper: &Hyperparameters, cfg: &SolverConfig) -> Result<PosteriorStats> {
    let small = inst.n() * inst.l() <= cfg.dense_cutoff;
    match cfg.path {
        PosteriorPath::Dense => posterior_dense(inst, hyper),
        PosteriorPath::Fast => match posterior_fast(inst, hyper) {
            Err(e) if e.is_numerical() && small => posterior_dense(inst, hyper).map_err(|_| e),
            other => other,
        },
    }
}

/// M-step on `stats`, then the refreshed posterior.
fn em_step(
    inst: &ProblemInstance,
    cfg: &SolverConfig,
    hyper: &mut Hyperparameters,
    stats: &PosteriorStats,
) -> Result<PosteriorStats> {
    let omegas = row_second_moments(stats);
    hyper.alpha = update_alpha(&omegas, &hyper.b2, cfg.beta, inst.l(), cfg.alpha_max);
    if cfg.learn_b2 {
        // Rescaling B2 by c and alpha by 1/c leaves B2 ⊗ B1 unchanged.
        let raw = b2_stationary_point(&omegas, &hyper.alpha, cfg.beta, cfg.jitter)?;
        let c = trace_normalizer(&raw)?;
        hyper.b2 = raw * c;
        hyper.alpha.apply(|a| *a = (*a / c).clamp(ALPHA_MIN, cfg.alpha_max));
    }
    if cfg.noise_learning {
        hyper.lambda = update_lambda(inst, stats, cfg.lambda_max);
    }
    posterior(inst, hyper, cfg)
}

pub fn run_em(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<SolverReport> {
    cfg.validate()?;
    let (n, l) = (inst.n(), inst.l());
    let lambda0 = cfg.lambda_init.resolve(inst.y()).min(cfg.lambda_max);
    let mut hyper = Hyperparameters::initial(n, l, cfg.alpha_init, cfg.beta, lambda0);
    let mut stats = posterior(inst, &hyper, cfg).map_err(|e| e.at_iteration(0))?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iter {
        let next = em_step(inst, cfg, &mut hyper, &stats).map_err(|e| e.at_iteration(t))?;
        let rel_change = relative_change(&next.mean, &stats.mean);
        stats = next;
        iterations = t;
        trace.push(IterationTrace {
            rel_change,
            lambda: hyper.lambda,
            alpha_min: hyper.alpha.min(),
            alpha_max: hyper.alpha.max(),
        });
        if rel_change < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(SolverReport {
        x_hat: stats.mean,
        hyper,
        iterations,
        converged,
        trace,
    })
}
