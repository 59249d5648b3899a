//! Worker-thread configuration.
//!
//! Parallelism is opt-in and bit-deterministic: work is only split along
//! independent output regions (matrix rows, samples), never across a
//! floating-point reduction. The default of one thread is controlled by
//! the `INVFORGE_THREADS` environment variable.

use std::sync::OnceLock;

static THREADS: OnceLock<usize> = OnceLock::new();
static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Resolves the worker-thread cap: explicit setting, else `INVFORGE_THREADS`,
/// else 1.
pub fn threads() -> usize {
    *THREADS.get_or_init(|| {
        std::env::var("INVFORGE_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1)
    })
}

/// Pins the worker-thread count. Only the first call (or first implicit
/// resolution via [`threads`]) wins.
pub fn set_threads(n: usize) {
    let _ = THREADS.set(n.max(1));
}

pub(crate) fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads())
            .build()
            .expect("failed to build worker pool")
    })
}
