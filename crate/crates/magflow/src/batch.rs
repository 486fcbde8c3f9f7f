//! Data-parallel mapping with a sequential fallback.
//!
//! With the `parallel` feature (on by default) batch maps run on a rayon
//! pool; without it the same API runs sequentially. The `MAGFLOW_THREADS`
//! environment variable caps the pool size when set.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Initializes the thread pool according to `MAGFLOW_THREADS`. Harmless to
/// call more than once or without the `parallel` feature.
pub fn init_threads() {
    #[cfg(feature = "parallel")]
    {
        use std::sync::Once;
        static INIT: Once = Once::new();
        INIT.call_once(|| {
            if let Some(n) = std::env::var("MAGFLOW_THREADS")
                .ok()
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&n| n > 0)
            {
                // Ignore failure: a pool may already exist in tests.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        });
    }
}

/// Maps `f` over `items`, in parallel when the feature allows.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over an index range, in parallel when the feature allows.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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
