//! Worker pool for independent experiment cells.

use rayon::prelude::*;

use crate::error::SimError;

/// Runs independent cells on a fixed-size pool and returns their results in
/// index order, so reductions never depend on the thread count.
#[derive(Debug)]
pub struct Executor {
    pool: rayon::ThreadPool,
}

impl Executor {
    /// `threads = 0` uses every available core.
    pub fn new(threads: usize) -> Result<Self, SimError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Evaluates `f(0..n)`. On failure the error of the lowest failing index
    /// is returned.
    pub fn map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>, SimError>
    where
        T: Send,
        F: Fn(usize) -> Result<T, SimError> + Sync + Send,
    {
        let results: Vec<Result<T, SimError>> = self.pool.install(|| (0..n).into_par_iter().map(&f).collect());
        results.into_iter().collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(0).expect("default pool")
    }
}
