//! Data-parallel execution with a sequential fallback.
//!
//! Audit rounds and per-sample gradient batches are independent tasks over
//! immutable inputs. With the `parallel` feature (default) they run on a
//! rayon pool; without it, or with `workers = 1`, they run sequentially.
//! Results are always collected positionally, so the two modes produce
//! bit-identical output and the worker count never leaks into results.

/// How a batch of independent tasks should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecPolicy {
    /// Worker threads to use. `None` means the default pool size
    /// (available parallelism); `Some(1)` forces sequential execution.
    pub workers: Option<usize>,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        Self { workers: None }
    }
}

impl ExecPolicy {
    pub fn sequential() -> Self {
        Self { workers: Some(1) }
    }

    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers: Some(workers.max(1)),
        }
    }

    fn is_sequential(&self) -> bool {
        !cfg!(feature = "parallel") || self.workers == Some(1)
    }
}

/// Run `f` for indices `0..n`, collecting results in index order.
///
/// The first error aborts the batch (outstanding tasks finish but their
/// results are dropped).
pub fn run_indexed<T, E, F>(policy: ExecPolicy, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    if policy.is_sequential() {
        return (0..n).map(f).collect();
    }
    run_indexed_parallel(policy, n, f)
}

#[cfg(feature = "parallel")]
fn run_indexed_parallel<T, E, F>(policy: ExecPolicy, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    use rayon::prelude::*;

    match policy.workers {
        Some(w) => {
            // Scoped pool so a caller-chosen worker count does not disturb
            // the global pool shared with nested gradient parallelism.
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("failed to build worker pool");
            pool.install(|| (0..n).into_par_iter().map(f).collect())
        }
        None => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_indexed_parallel<T, E, F>(_policy: ExecPolicy, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, preserving order. Parallel when the feature is on.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
