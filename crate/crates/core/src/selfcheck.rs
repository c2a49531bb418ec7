//! Randomized consistency checks runnable from the CLI.
//!
//! * fast E-step against the dense one,
//! * `B2` update against a finite-difference gradient of its objective,
//! * `alpha_i phi_i = 3L/2` before clamping,
//! * `lambda` update against perturbed values of its objective.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{build_row_precision, Hyperparameters, PosteriorStats, ProblemInstance};
use crate::solver::{
    alpha_from_phi, b2_stationary_point, expected_residual, phi_values, posterior_dense, posterior_fast,
    row_second_moments, update_lambda,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed deviation for the check.
    pub worst: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix `A Aᵀ + 0.5 I`.
fn random_spd(rng: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let a = gaussian(rng, l, l);
    &a * a.transpose() + DMatrix::identity(l, l) * 0.5
}

fn random_problem(rng: &mut ChaCha8Rng) -> (ProblemInstance, Hyperparameters) {
    let n = rng.random_range(2..=12);
    let m = rng.random_range(1..=8);
    let l = rng.random_range(1..=4);
    let phi = gaussian(rng, m, n);
    let y = gaussian(rng, m, l);
    let beta = [0.0, 0.5, 1.0][rng.random_range(0..3)];
    let alpha = DVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-1.0..1.0)));
    let hyper = Hyperparameters {
        alpha,
        beta,
        b2: random_spd(rng, l),
        lambda: 10f64.powf(rng.random_range(-1.0..1.5)),
    };
    (ProblemInstance::new(phi, y, None).expect("finite draws"), hyper)
}

fn max_stats_gap(a: &PosteriorStats, b: &PosteriorStats) -> f64 {
    let mut gap = (&a.mean - &b.mean).amax();
    for (x, y) in a.row_cov.iter().zip(&b.row_cov) {
        gap = gap.max((x - y).amax());
    }
    gap.max((a.residual_trace - b.residual_trace).abs())
}

/// `(N/2) log|B2| - (1/2) sum_i b_i tr(B2 Omega_i)`.
pub fn b2_objective(b2: &DMatrix<f64>, omegas: &[DMatrix<f64>], b1: &DVector<f64>) -> f64 {
    let log_det = match b2.clone().cholesky() {
        Some(c) => 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => return f64::NEG_INFINITY,
    };
    let fit: f64 = omegas.iter().zip(b1.iter()).map(|(o, b)| b * b2.component_mul(o).sum()).sum();
    0.5 * omegas.len() as f64 * log_det - 0.5 * fit
}

/// Largest central-difference derivative of [`b2_objective`] over the free
/// (upper-triangular) entries of `b2`.
pub fn b2_gradient_max(b2: &DMatrix<f64>, omegas: &[DMatrix<f64>], b1: &DVector<f64>) -> f64 {
    let l = b2.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..l {
        for j in i..l {
            let h = 1e-6 * b2[(i, i)].abs().max(1e-3);
            let bump = |sign: f64| {
                let mut p = b2.clone();
                p[(i, j)] += sign * h;
                if i != j {
                    p[(j, i)] += sign * h;
                }
                b2_objective(&p, omegas, b1)
            };
            worst = worst.max(((bump(1.0) - bump(-1.0)) / (2.0 * h)).abs());
        }
    }
    worst
}

/// Scalar noise objective `(ML/2) log lambda - (lambda/2) E`.
pub fn lambda_objective(lambda: f64, ml: usize, expected: f64) -> f64 {
    0.5 * ml as f64 * lambda.ln() - 0.5 * lambda * expected
}

pub fn run_selfcheck(cases: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fast_vs_dense = CheckOutcome { name: "posterior_fast == posterior_dense", cases, failures: 0, worst: 0.0 };
    let mut b2_grad = CheckOutcome { name: "B2 update zeroes the Q gradient", cases, failures: 0, worst: 0.0 };
    let mut alpha_bound = CheckOutcome { name: "alpha_i * phi_i == 3L/2", cases, failures: 0, worst: 0.0 };
    let mut lambda_max = CheckOutcome { name: "lambda update maximizes Q", cases, failures: 0, worst: 0.0 };

    for _ in 0..cases {
        let (inst, hyper) = random_problem(&mut rng);
        let dense = posterior_dense(&inst, &hyper)?;
        let fast = posterior_fast(&inst, &hyper)?;
        let gap = max_stats_gap(&dense, &fast);
        fast_vs_dense.worst = fast_vs_dense.worst.max(gap);
        if !(gap <= 1e-8) {
            fast_vs_dense.failures += 1;
        }

        let omegas = row_second_moments(&dense);
        let b1 = build_row_precision(&hyper.alpha, hyper.beta)?;
        let b2 = b2_stationary_point(&omegas, &hyper.alpha, hyper.beta, 1e-10)?;
        let g = b2_gradient_max(&b2, &omegas, &b1);
        b2_grad.worst = b2_grad.worst.max(g);
        if !(g < 1e-5) {
            b2_grad.failures += 1;
        }

        let l = inst.l();
        let target = 1.5 * l as f64;
        for phi in phi_values(&omegas, &hyper.b2, hyper.beta).iter() {
            let dev = (alpha_from_phi(*phi, l) * phi - target).abs() / target;
            alpha_bound.worst = alpha_bound.worst.max(dev);
            if dev > 4.0 * f64::EPSILON {
                alpha_bound.failures += 1;
            }
        }

        let lam = update_lambda(&inst, &dense, f64::INFINITY);
        let ml = inst.m() * inst.l();
        let e = expected_residual(&inst, &dense);
        let q0 = lambda_objective(lam, ml, e);
        let drop = [1.0 - 1e-3, 1.0 + 1e-3]
            .iter()
            .map(|f| q0 - lambda_objective(lam * f, ml, e))
            .fold(f64::INFINITY, f64::min);
        lambda_max.worst = lambda_max.worst.max(-drop);
        if !(drop > 0.0) {
            lambda_max.failures += 1;
        }
    }
    Ok(vec![fast_vs_dense, b2_grad, alpha_bound, lambda_max])
}
