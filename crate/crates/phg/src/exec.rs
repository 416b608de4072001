//! Thread-pool executor. Results come back in index order, so runs with any
//! thread count produce the same numbers.

use phg_core::training::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::error::{CliError, Result};

pub struct Pool(ThreadPool);

impl Pool {
    pub fn new(threads: usize) -> Result<Self> {
        ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map(Pool)
            .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.0.install(|| (0..n).into_par_iter().map(f).collect())
    }
}
