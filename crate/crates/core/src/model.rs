//! Signal model shared by the pattern-coupled solver and the MSBL baseline.
//!
//! The unknown `X` is `N x L` (rows are coefficients, columns are measurement
//! vectors) and is observed through `Y = Phi X + V`. Row `n` of `X` carries the
//! prior `N(0, b_n^{-1} B2^{-1})` where `b_n = alpha_n + beta alpha_{n-1} +
//! beta alpha_{n+1}` with zero neighbours past either end.
//!
//! Whenever `X` is flattened the convention is column stacking: entry `(i, l)`
//! lives at position `i + l * N`. Under that convention the joint prior
//! precision is `B2 ⊗ B1` with `B1 = diag(b)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Smallest value any `alpha_n` may take.
pub const ALPHA_MIN: f64 = 1e-10;
pub const DEFAULT_ALPHA_MAX: f64 = 1e12;
pub const DEFAULT_LAMBDA_MAX: f64 = 1e12;
pub const DEFAULT_JITTER: f64 = 1e-10;

/// Sensing matrix, measurements and (optionally) the true signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    phi: DMatrix<f64>,
    y: DMatrix<f64>,
    truth: Option<DMatrix<f64>>,
}

impl ProblemInstance {
    pub fn new(phi: DMatrix<f64>, y: DMatrix<f64>, truth: Option<DMatrix<f64>>) -> Result<Self> {
        let (m, n) = phi.shape();
        if m == 0 || n == 0 {
            return Err(Error::invalid("sensing matrix must be non-empty"));
        }
        if y.nrows() != m || y.ncols() == 0 {
            return Err(Error::invalid(format!(
                "measurements are {}x{}, expected {m} rows and at least one column",
                y.nrows(),
                y.ncols()
            )));
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sensing matrix has non-finite entries"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measurements have non-finite entries"));
        }
        if let Some(x) = &truth {
            if x.shape() != (n, y.ncols()) {
                return Err(Error::invalid(format!(
                    "ground truth is {}x{}, expected {n}x{}",
                    x.nrows(),
                    x.ncols(),
                    y.ncols()
                )));
            }
        }
        Ok(Self { phi, y, truth })
    }

    pub fn m(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn l(&self) -> usize {
        self.y.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn truth(&self) -> Option<&DMatrix<f64>> {
        self.truth.as_ref()
    }
}

/// `alpha` (row sparsity controls), `beta` (neighbour coupling), `b2`
/// (inter-column precision) and `lambda` (noise precision).
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub alpha: DVector<f64>,
    pub beta: f64,
    pub b2: DMatrix<f64>,
    pub lambda: f64,
}

impl Hyperparameters {
    /// Neutral start: every `alpha_n = alpha`, `B2 = I`.
    pub fn initial(n: usize, l: usize, alpha: f64, beta: f64, lambda: f64) -> Self {
        Self {
            alpha: DVector::from_element(n, alpha),
            beta,
            b2: DMatrix::identity(l, l),
            lambda,
        }
    }

    pub fn validate(&self, n: usize, l: usize) -> Result<()> {
        if self.alpha.len() != n {
            return Err(Error::invalid(format!("alpha has length {}, expected {n}", self.alpha.len())));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::invalid(format!("alpha entries must be positive and finite, got {a}")));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.b2.shape() != (l, l) {
            return Err(Error::invalid(format!(
                "B2 is {}x{}, expected {l}x{l}",
                self.b2.nrows(),
                self.b2.ncols()
            )));
        }
        if !linalg::is_symmetric(&self.b2, 1e-12) {
            return Err(Error::invalid("B2 is not symmetric"));
        }
        if self.b2.clone().cholesky().is_none() {
            return Err(Error::numerical("B2 is not positive definite"));
        }
        Ok(())
    }
}

/// Gaussian posterior of `X` summarised by what the M-step consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    /// Posterior mean, `N x L`.
    pub mean: DMatrix<f64>,
    /// `L x L` covariance of each row of `X`.
    pub row_cov: Vec<DMatrix<f64>>,
    /// `tr((I_L ⊗ PhiᵀPhi) Sigma)`, the expected residual beyond the mean fit.
    pub residual_trace: f64,
}

/// Initial noise precision for the EM drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaInit {
    /// `100 / var(Y)`, floored at 1.
    Auto,
    Fixed(f64),
}

impl LambdaInit {
    pub fn resolve(self, y: &DMatrix<f64>) -> f64 {
        match self {
            LambdaInit::Fixed(v) => v,
            LambdaInit::Auto => {
                let count = y.len() as f64;
                let mean = y.sum() / count;
                let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
                if var > 0.0 {
                    (100.0 / var).max(1.0)
                } else {
                    1.0
                }
            }
        }
    }
}

/// Which E-step implementation the solver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosteriorPath {
    /// Eigendecomposition of `B2`, dense path as fallback when it fails.
    Fast,
    /// Full `NL x NL` precision inversion.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub beta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub alpha_init: f64,
    pub lambda_init: LambdaInit,
    pub alpha_max: f64,
    pub lambda_max: f64,
    pub jitter: f64,
    pub noise_learning: bool,
    /// When false `B2` stays at the identity.
    pub learn_b2: bool,
    pub path: PosteriorPath,
    /// Largest `N * L` for which the dense path may be used.
    pub dense_cutoff: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            max_iter: 500,
            tol: 1e-6,
            alpha_init: 1.0,
            lambda_init: LambdaInit::Auto,
            alpha_max: DEFAULT_ALPHA_MAX,
            lambda_max: DEFAULT_LAMBDA_MAX,
            jitter: DEFAULT_JITTER,
            noise_learning: true,
            learn_b2: true,
            path: PosteriorPath::Fast,
            dense_cutoff: 600,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!("beta must lie in [0, 1], got {}", self.beta)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        if !(self.alpha_init > 0.0 && self.alpha_max > self.alpha_init) {
            return Err(Error::invalid("need alpha_max > alpha_init > 0"));
        }
        if !(self.lambda_max > 0.0 && self.jitter > 0.0) {
            return Err(Error::invalid("lambda_max and jitter must be positive"));
        }
        if let LambdaInit::Fixed(v) = self.lambda_init {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("lambda_init must be positive"));
            }
        }
        Ok(())
    }
}

/// Diagonal of `B1`: `b_n = alpha_n + beta (alpha_{n-1} + alpha_{n+1})`, with
/// `alpha_0 = alpha_{N+1} = 0`.
pub fn build_row_precision(alpha: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    if let Some(a) = alpha.iter().find(|a| !a.is_finite()) {
        return Err(Error::invalid(format!("non-finite alpha entry {a}")));
    }
    if !beta.is_finite() {
        return Err(Error::invalid("non-finite beta"));
    }
    let n = alpha.len();
    Ok(DVector::from_fn(n, |i, _| {
        let left = if i > 0 { alpha[i - 1] } else { 0.0 };
        let right = if i + 1 < n { alpha[i + 1] } else { 0.0 };
        alpha[i] + beta * (left + right)
    }))
}

/// Normalised log-density of the matrix-variate prior:
/// `L/2 log|B1| + N/2 log|B2| - NL/2 log 2pi - tr(Xᵀ B1 X B2) / 2`.
pub fn log_prior(x: &DMatrix<f64>, alpha: &DVector<f64>, beta: f64, b2: &DMatrix<f64>) -> Result<f64> {
    let (n, l) = x.shape();
    if alpha.len() != n || b2.shape() != (l, l) {
        return Err(Error::invalid("dimension mismatch in log_prior"));
    }
    let b1 = build_row_precision(alpha, beta)?;
    if b1.iter().any(|b| *b <= 0.0) {
        return Err(Error::invalid("row precisions must be positive"));
    }
    let log_det_b2 = linalg::log_det_spd(b2, "B2")?;
    let log_det_b1: f64 = b1.iter().map(|b| b.ln()).sum();

    let quad: f64 = (0..n)
        .map(|i| {
            let row = x.row(i).transpose();
            b1[i] * (row.transpose() * b2 * &row)[(0, 0)]
        })
        .sum();

    let (nf, lf) = (n as f64, l as f64);
    Ok(0.5 * lf * log_det_b1 + 0.5 * nf * log_det_b2
        - 0.5 * nf * lf * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * quad)
}
