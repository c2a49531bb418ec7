//! Trial dispatch. With the `parallel` feature (on by default) independent
//! tasks run on a rayon pool of the requested size; without it, or with one
//! worker, they run in order on the calling thread. Results always come back
//! in input order.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `workers == 0` uses the rayon default (one per core).
    Parallel { workers: usize },
}

impl Execution {
    pub fn with_workers(workers: usize) -> Self {
        if workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }
}

pub fn map_tasks<T, R, F>(tasks: &[T], exec: Execution, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok(tasks.iter().map(f).collect()),
        Execution::Parallel { workers } => parallel_map(tasks, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(tasks: &[T], workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(|| tasks.par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(tasks: &[T], _workers: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    Ok(tasks.iter().map(f).collect())
}
