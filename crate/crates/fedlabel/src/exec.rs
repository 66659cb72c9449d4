//! Execution strategy for the data-parallel per-client work inside a round.
//!
//! With the `parallel` feature (default) client updates can run on a rayon
//! pool; without it only the sequential path exists. Both paths produce
//! identical results: outputs are collected in index order and every client
//! derives its own RNG seeds.

#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping worker parallelism.
pub const THREADS_ENV: &str = "FEDLABEL_THREADS";

#[derive(Clone)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(Arc<rayon::ThreadPool>),
}

impl std::fmt::Debug for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecMode::Sequential => f.write_str("Sequential"),
            #[cfg(feature = "parallel")]
            ExecMode::Parallel(p) => write!(f, "Parallel({} threads)", p.current_num_threads()),
        }
    }
}

impl ExecMode {
    /// Mode selected by `FEDLABEL_THREADS`: `1` forces sequential, any other
    /// value caps the pool size, unset uses all available cores.
    pub fn from_env() -> ExecMode {
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok());
        match cap {
            Some(1) => ExecMode::Sequential,
            #[cfg(feature = "parallel")]
            Some(n) => ExecMode::parallel_with_threads(n),
            #[cfg(feature = "parallel")]
            None => ExecMode::parallel_with_threads(0),
            #[cfg(not(feature = "parallel"))]
            _ => ExecMode::Sequential,
        }
    }

    #[cfg(feature = "parallel")]
    pub fn parallel_with_threads(n: usize) -> ExecMode {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("building rayon pool");
        ExecMode::Parallel(Arc::new(pool))
    }
}

/// Apply `f` to `0..n` and collect results in index order.
pub fn map_indexed<T, F>(mode: &ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel(pool) => {
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
    }
}
