//! Thread-pool executor.

use anyhow::{Context, Result};
use bmlp_core::exec::Executor;
use rayon::prelude::*;

/// Runs jobs on a dedicated rayon pool. Results come back in index order,
/// so outputs match [`bmlp_core::exec::Sequential`] bit for bit.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `None` uses every available core.
    pub fn new(threads: Option<usize>) -> Result<Self> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        Ok(RayonExecutor {
            pool: b.build().context("building the worker pool")?,
        })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
