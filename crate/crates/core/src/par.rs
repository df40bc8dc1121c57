//! Execution strategy for the data-parallel inner loops (Monte Carlo
//! batches, candidate enumeration, sweep cells).
//!
//! With the `parallel` feature (on by default) [`Exec::Parallel`] fans work
//! out over rayon's pool. Without it every call runs sequentially, so the
//! crate builds and behaves identically on targets where threads are
//! unwelcome. Results never depend on the strategy: reductions are
//! order-independent or performed after collection in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// `Parallel` when the crate was built with rayon, otherwise `Sequential`.
    pub fn best() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Maps `f` over a slice, returning results in input order.
pub fn map_slice<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Runs `f` inside a pool capped at `width` threads (ignored without rayon).
pub fn with_width<R: Send>(width: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(w) = width.filter(|&w| w > 0) {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            return pool.install(f);
        }
    }
    let _ = width;
    f()
}

/// Pool width requested through `ASFL_BENCH_THREADS`, if set and positive.
pub fn env_width() -> Option<usize> {
    std::env::var("ASFL_BENCH_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
}
