//! Data-parallel helpers. With the `parallel` feature disabled every
//! executor runs sequentially, so results never depend on the feature.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Order-preserving map.
pub fn map<T, U, F>(exec: Exec, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Runs `f` inside a pool of `jobs` threads, or inline for one job.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> crate::error::Result<R> {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| crate::error::Error::ThreadPool(e.to_string()))?;
        return Ok(pool.install(f));
    }
    let _ = jobs;
    Ok(f())
}
