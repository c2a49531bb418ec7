//! Pattern-coupled sparse Bayesian learning (MPCSBL) for recovering block-sparse
//! signals that share one row support across multiple measurement vectors.
//!
//! * [`model`]: problem and hyperparameter types, the coupled row prior.
//! * [`solver`]: E-step (dense and eigendecomposition paths), M-step updates
//!   and the EM driver [`solver::run_em`].
//! * [`msbl`]: the uncoupled MSBL baseline.
//! * [`datagen`]: seeded synthetic problems.
//! * [`bench`]: Monte-Carlo sweeps, NMSE, CSV and instance-file I/O.

pub mod bench;
pub mod datagen;
pub mod error;
pub mod exec;
mod linalg;
pub mod model;
pub mod msbl;
pub mod selfcheck;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{Hyperparameters, PosteriorStats, ProblemInstance, SolverConfig};
pub use solver::{run_em, SolverReport};
