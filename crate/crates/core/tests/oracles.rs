//! Independent oracles for the posterior, the prior density, the M-step and
//! the end-to-end solvers.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mpcsbl::bench::nmse;
use mpcsbl::datagen::{gen_sensing_matrix, GenSpec};
use mpcsbl::model::{build_row_precision, log_prior, LambdaInit};
use mpcsbl::msbl::{msbl_posterior, run_msbl, MsblConfig};
use mpcsbl::selfcheck::{b2_gradient_max, b2_objective};
use mpcsbl::solver::{
    b2_stationary_point, posterior_dense, posterior_fast, row_second_moments, update_b2,
};
use mpcsbl::{run_em, Hyperparameters, PosteriorStats, ProblemInstance, SolverConfig};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn spd(rng: &mut ChaCha8Rng, l: usize) -> DMatrix<f64> {
    let a = gaussian(rng, l, l);
    &a * a.transpose() + DMatrix::identity(l, l) * 0.5
}

fn random_case(seed: u64, m: usize, n: usize, l: usize, beta: f64) -> (ProblemInstance, Hyperparameters) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi = gaussian(&mut rng, m, n);
    let y = gaussian(&mut rng, m, l);
    let alpha = DVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-1.0..1.0)));
    let hyper = Hyperparameters {
        alpha,
        beta,
        b2: spd(&mut rng, l),
        lambda: 10f64.powf(rng.random_range(-1.0..1.0)),
    };
    (ProblemInstance::new(phi, y, None).unwrap(), hyper)
}

/// Column-stacked vector: entry `(i, l)` lands at `i + l N`.
fn vec_col(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// Prior covariance `(B2 ⊗ B1)^{-1}` built entry by entry.
fn prior_covariance(hyper: &Hyperparameters) -> DMatrix<f64> {
    let b1 = build_row_precision(&hyper.alpha, hyper.beta).unwrap();
    let n = b1.len();
    let l = hyper.b2.nrows();
    let precision = DMatrix::from_fn(n * l, n * l, |r, c| {
        let (i, a) = (r % n, r / n);
        let (j, b) = (c % n, c / n);
        if i == j {
            hyper.b2[(a, b)] * b1[i]
        } else {
            0.0
        }
    });
    precision.try_inverse().unwrap()
}

fn max_gap(a: &PosteriorStats, b: &PosteriorStats) -> f64 {
    let mut gap = (&a.mean - &b.mean).amax();
    for (x, y) in a.row_cov.iter().zip(&b.row_cov) {
        gap = gap.max((x - y).amax());
    }
    gap.max((a.residual_trace - b.residual_trace).abs())
}

#[test]
fn posterior_matches_conditional_gaussian() {
    let (m, n, l) = (4, 6, 2);
    for seed in 0..5 {
        let (inst, hyper) = random_case(seed, m, n, l, 0.5);
        // x ~ N(0, Cx), y = (I ⊗ Phi) x + v, v ~ N(0, I / lambda)
        let cx = prior_covariance(&hyper);
        let a = DMatrix::from_fn(m * l, n * l, |r, c| {
            if r / m == c / n {
                inst.phi()[(r % m, c % n)]
            } else {
                0.0
            }
        });
        let cyy = &a * &cx * a.transpose() + DMatrix::identity(m * l, m * l) / hyper.lambda;
        let cxy = &cx * a.transpose();
        let gain = &cxy * cyy.try_inverse().unwrap();
        let mean = &gain * vec_col(inst.y());
        let cov = &cx - &gain * cxy.transpose();

        let post = posterior_dense(&inst, &hyper).unwrap();
        let got = vec_col(&post.mean);
        assert!((&got - &mean).amax() < 1e-9, "seed {seed}");
        for i in 0..n {
            let block = DMatrix::from_fn(l, l, |p, q| cov[(i + p * n, i + q * n)]);
            assert!((&post.row_cov[i] - block).amax() < 1e-9, "seed {seed} row {i}");
        }
        let residual_trace = (a.transpose() * &a * &cov).trace();
        assert!((post.residual_trace - residual_trace).abs() < 1e-9);
    }
}

#[test]
fn fast_matches_dense_on_spec_shape() {
    for (seed, beta) in [(10, 0.0), (11, 0.5), (12, 1.0)] {
        let (inst, hyper) = random_case(seed, 5, 8, 3, beta);
        let gap = max_gap(&posterior_dense(&inst, &hyper).unwrap(), &posterior_fast(&inst, &hyper).unwrap());
        assert!(gap < 1e-8, "seed {seed}: {gap}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_equals_dense(seed in any::<u64>(), m in 1usize..=8, n in 2usize..=12, l in 1usize..=4, bi in 0usize..3) {
        let (inst, hyper) = random_case(seed, m, n, l, [0.0, 0.5, 1.0][bi]);
        let gap = max_gap(&posterior_dense(&inst, &hyper).unwrap(), &posterior_fast(&inst, &hyper).unwrap());
        prop_assert!(gap <= 1e-8, "gap {}", gap);
    }

    #[test]
    fn row_precision_is_linear_and_monotone(
        alpha in proptest::collection::vec(1e-3f64..1e3, 1..20),
        beta in 0.0f64..=1.0,
        bump in 0usize..20,
    ) {
        let a = DVector::from_vec(alpha);
        let b = build_row_precision(&a, beta).unwrap();
        let doubled = build_row_precision(&(&a * 2.0), beta).unwrap();
        prop_assert!((&doubled - &b * 2.0).amax() <= 1e-12 * b.amax());
        prop_assert!(b.iter().zip(a.iter()).all(|(bi, ai)| bi >= ai));
        let mut raised = a.clone();
        let k = bump % raised.len();
        raised[k] += 1.0;
        let b_raised = build_row_precision(&raised, beta).unwrap();
        prop_assert!(b_raised.iter().zip(b.iter()).all(|(x, y)| x >= y));
    }

    #[test]
    fn b2_update_is_spd_with_trace_l(seed in any::<u64>(), n in 2usize..10, l in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omegas: Vec<_> = (0..n).map(|_| spd(&mut rng, l)).collect();
        let alpha = DVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-2.0..2.0)));
        let b2 = update_b2(&omegas, &alpha, 1.0, 1e-10).unwrap();
        prop_assert!((b2.trace() - l as f64).abs() < 1e-10);
        prop_assert!(b2.clone().cholesky().is_some());
        prop_assert!((&b2 - b2.transpose()).amax() == 0.0);
    }
}

#[test]
fn log_prior_matches_kronecker_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, l) = (3, 2);
    for beta in [0.0, 0.5, 1.0] {
        let x = gaussian(&mut rng, n, l);
        let hyper = Hyperparameters {
            alpha: DVector::from_fn(n, |_, _| rng.random_range(0.2..3.0)),
            beta,
            b2: spd(&mut rng, l),
            lambda: 1.0,
        };
        let cov = prior_covariance(&hyper);
        let v = vec_col(&x);
        let chol = cov.clone().cholesky().unwrap();
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = (v.transpose() * chol.solve(&v))[(0, 0)];
        let d = (n * l) as f64;
        let expected = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
        let got = log_prior(&x, &hyper.alpha, beta, &hyper.b2).unwrap();
        assert!((got - expected).abs() < 1e-10, "beta {beta}: {got} vs {expected}");
    }
}

#[test]
fn second_moments_match_sampling() {
    let (inst, hyper) = random_case(21, 4, 5, 3, 1.0);
    let post = posterior_dense(&inst, &hyper).unwrap();
    let omegas = row_second_moments(&post);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 100_000;
    let l = inst.l();
    for (i, omega) in omegas.iter().enumerate() {
        let chol = post.row_cov[i].clone().cholesky().unwrap();
        let mu = post.mean.row(i).transpose();
        let mut sum = DMatrix::<f64>::zeros(l, l);
        let mut sum_sq = DMatrix::<f64>::zeros(l, l);
        let (mut tr_sum, mut tr_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let z = DVector::from_fn(l, |_, _| rng.sample(StandardNormal));
            let s = &mu + chol.l() * z;
            let outer = &s * s.transpose();
            let tr = outer.trace();
            tr_sum += tr;
            tr_sq += tr * tr;
            sum_sq += outer.component_mul(&outer);
            sum += outer;
        }
        let nd = draws as f64;
        // one scalar per row at 3 standard errors
        let tr_mean = tr_sum / nd;
        let tr_se = ((tr_sq / nd - tr_mean * tr_mean) / nd).sqrt();
        assert!((tr_mean - omega.trace()).abs() <= 3.0 * tr_se, "row {i}: trace {tr_mean} vs {}", omega.trace());
        // every entry, with the band widened for the number of entries checked
        let mean = &sum / nd;
        for p in 0..l {
            for q in 0..l {
                let se = ((sum_sq[(p, q)] / nd - mean[(p, q)].powi(2)) / nd).sqrt();
                assert!(
                    (mean[(p, q)] - omega[(p, q)]).abs() <= 4.5 * se + 1e-12,
                    "row {i} entry ({p},{q}): {} vs {} (se {se})",
                    mean[(p, q)],
                    omega[(p, q)]
                );
            }
        }
    }
}

#[test]
fn b2_stationary_point_zeroes_gradient() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, l) = (rng.random_range(2..10), rng.random_range(1..5));
        let omegas: Vec<_> = (0..n).map(|_| spd(&mut rng, l)).collect();
        let alpha = DVector::from_fn(n, |_, _| rng.random_range(0.1..5.0));
        let beta = [0.0, 0.5, 1.0][seed as usize % 3];
        let b1 = build_row_precision(&alpha, beta).unwrap();
        let b2 = b2_stationary_point(&omegas, &alpha, beta, 1e-10).unwrap();
        assert!(b2_gradient_max(&b2, &omegas, &b1) < 1e-5, "seed {seed}");
        // and it is a maximum, not just a critical point
        let q0 = b2_objective(&b2, &omegas, &b1);
        assert!(b2_objective(&(&b2 * 1.01), &omegas, &b1) < q0);
        assert!(b2_objective(&(&b2 * 0.99), &omegas, &b1) < q0);
    }
}

/// Single-vector pattern-coupled SBL written out with scalar moments.
fn scalar_reference(phi: &DMatrix<f64>, y: &DVector<f64>, beta: f64, lambda: f64, iters: usize) -> (DVector<f64>, DVector<f64>) {
    let n = phi.ncols();
    let gram = phi.transpose() * phi;
    let mut alpha = DVector::from_element(n, 1.0);
    let posterior = |alpha: &DVector<f64>| {
        let mut p = &gram * lambda;
        for i in 0..n {
            let left = if i > 0 { alpha[i - 1] } else { 0.0 };
            let right = if i + 1 < n { alpha[i + 1] } else { 0.0 };
            p[(i, i)] += alpha[i] + beta * (left + right);
        }
        let cov = p.try_inverse().unwrap();
        let mean = &cov * phi.transpose() * y * lambda;
        (mean, cov)
    };
    let (mut mean, mut cov) = posterior(&alpha);
    for _ in 0..iters {
        let omega = DVector::from_fn(n, |i, _| mean[i] * mean[i] + cov[(i, i)]);
        alpha = DVector::from_fn(n, |i, _| {
            let left = if i > 0 { omega[i - 1] } else { 0.0 };
            let right = if i + 1 < n { omega[i + 1] } else { 0.0 };
            let phi_i = 0.5 * (omega[i] + beta * (left + right));
            3.0 / (2.0 * phi_i)
        });
        (mean, cov) = posterior(&alpha);
    }
    (mean, alpha)
}

#[test]
fn single_vector_run_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, n) = (6, 10);
    let phi = gaussian(&mut rng, m, n);
    let mut x = DVector::zeros(n);
    for i in 3..6 {
        x[i] = rng.sample(StandardNormal);
    }
    let y = &phi * &x + DVector::from_fn(m, |_, _| 0.01 * rng.sample::<f64, _>(StandardNormal));
    let iters = 15;
    let lambda = 50.0;
    for beta in [0.0, 0.5, 1.0] {
        let inst = ProblemInstance::new(phi.clone(), DMatrix::from_column_slice(m, 1, y.as_slice()), None).unwrap();
        let cfg = SolverConfig {
            beta,
            max_iter: iters,
            tol: 1e-300,
            lambda_init: LambdaInit::Fixed(lambda),
            noise_learning: false,
            learn_b2: false,
            ..SolverConfig::default()
        };
        let report = run_em(&inst, &cfg).unwrap();
        assert_eq!(report.iterations, iters);
        let (mean, alpha) = scalar_reference(&phi, &y, beta, lambda, iters);
        let rel = (report.x_hat.column(0) - &mean).norm() / mean.norm();
        assert!(rel < 1e-8, "beta {beta}: mean gap {rel}");
        let arel = (&report.hyper.alpha - &alpha).amax() / alpha.amax();
        assert!(arel < 1e-8, "beta {beta}: alpha gap {arel}");
    }
}

#[test]
fn uncoupled_identity_b2_matches_msbl_posterior() {
    for seed in 0..5 {
        let (inst, mut hyper) = random_case(40 + seed, 5, 9, 3, 0.0);
        hyper.b2 = DMatrix::identity(3, 3);
        let gamma = hyper.alpha.map(|a| 1.0 / a);
        let ours = posterior_fast(&inst, &hyper).unwrap();
        let theirs = msbl_posterior(&inst, &gamma, hyper.lambda).unwrap();
        assert!((&ours.mean - &theirs.mean).amax() < 1e-8, "seed {seed}");
        for i in 0..inst.n() {
            assert!((ours.row_cov[i][(0, 0)] - theirs.cov_diag[i]).abs() < 1e-8);
        }
    }
}

#[test]
fn msbl_single_vector_reduces_to_sbl() {
    // L = 1: MSBL is plain SBL, gamma_i <- mu_i^2 + Sigma_ii
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m, n) = (5, 8);
    let phi = gaussian(&mut rng, m, n);
    let y = gaussian(&mut rng, m, 1);
    let lambda = 4.0;
    let inst = ProblemInstance::new(phi.clone(), y.clone(), None).unwrap();
    let cfg = MsblConfig {
        max_iter: 10,
        tol: 1e-300,
        noise_learning: false,
        lambda_init: LambdaInit::Fixed(lambda),
        gamma_floor: 1e-300,
        ..MsblConfig::default()
    };
    let report = run_msbl(&inst, &cfg).unwrap();

    let mut gamma = DVector::from_element(n, 1.0);
    let mut mean = DVector::zeros(n);
    for _ in 0..=10 {
        let mut p = phi.transpose() * &phi * lambda;
        for i in 0..n {
            p[(i, i)] += 1.0 / gamma[i];
        }
        let cov = p.try_inverse().unwrap();
        mean = &cov * phi.transpose() * y.column(0) * lambda;
        gamma = DVector::from_fn(n, |i, _| mean[i] * mean[i] + cov[(i, i)]);
    }
    assert!((report.x_hat.column(0) - mean).amax() < 1e-8);
}

#[test]
fn coupled_solver_recovers_one_contiguous_block() {
    let (m, n, l, k) = (25, 50, 3, 8);
    let mut hits = 0;
    for seed in 0..50u64 {
        let spec = GenSpec { m, n, l, k, num_blocks: 1, seed, ..GenSpec::default() };
        let phi = gen_sensing_matrix(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let start = rng.random_range(0..=n - k);
        let mut x = DMatrix::zeros(n, l);
        for i in start..start + k {
            for c in 0..l {
                x[(i, c)] = rng.sample(StandardNormal);
            }
        }
        let y = &phi * &x;
        let inst = ProblemInstance::new(phi, y, None).unwrap();
        let report = run_em(&inst, &SolverConfig { beta: 1.0, ..SolverConfig::default() }).unwrap();
        if nmse(&report.x_hat, &x).unwrap() < 1e-3 {
            hits += 1;
        }
    }
    assert!(hits >= 45, "{hits}/50 recoveries");
}

#[test]
fn msbl_recovers_scattered_support() {
    let (m, n, l, k) = (25, 50, 3, 8);
    let mut errors = Vec::new();
    for seed in 0..50u64 {
        let spec = GenSpec { m, n, l, k, num_blocks: 1, seed, ..GenSpec::default() };
        let phi = gen_sensing_matrix(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let support = rand::seq::index::sample(&mut rng, n, k);
        let mut x = DMatrix::zeros(n, l);
        for i in support {
            for c in 0..l {
                x[(i, c)] = rng.sample(StandardNormal);
            }
        }
        let y = &phi * &x;
        let inst = ProblemInstance::new(phi, y, None).unwrap();
        let report = run_msbl(&inst, &MsblConfig::default()).unwrap();
        errors.push(nmse(&report.x_hat, &x).unwrap());
    }
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[24] + errors[25]);
    assert!(median < 1e-3, "median NMSE {median}");
}
