//! Index-ordered parallel map with a sequential fallback.
//!
//! Results always come back in index order so that output never depends on
//! scheduling or on the number of workers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};

pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    map_indexed(items.len(), |i| f(&items[i]))
}

/// Runs `job` on a pool of `workers` threads (0 = library default).
pub fn with_workers<T, F>(workers: usize, job: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return Ok(job());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(job))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        let _ = Error::Config(String::new());
        Ok(job())
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
