//! Data-parallel map with a sequential fallback.
//!
//! Batch members, generated scenes, and evaluated images are independent, so
//! the work-horse primitive is an indexed map. With the `parallel` feature
//! (default) it fans out over a rayon pool sized by `HLSPOT_THREADS` (0 or
//! unset: one worker per core); without it, or with `HLSPOT_THREADS=1`, it
//! degrades to a plain sequential loop. Results always come back in input
//! order, so downstream reductions (the gradient sum, scene numbering) are
//! deterministic either way.

/// Thread-count override honored by [`par_map`]. `0` or unset means "all
/// cores"; `1` forces the sequential path even when rayon is compiled in.
pub const THREADS_ENV: &str = "HLSPOT_THREADS";

/// Number of worker threads the parallel path would use right now.
pub fn effective_threads() -> usize {
    let requested = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        if let Some(pool) = shared_pool() {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    seq_map(n, f)
}

/// Pool shared by every `par_map` call; sized once from the environment.
/// `None` when a single worker was requested — no point paying for rayon.
#[cfg(feature = "parallel")]
fn shared_pool() -> Option<&'static rayon::ThreadPool> {
    use std::sync::OnceLock;
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = effective_threads();
        (threads > 1).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("rayon pool")
        })
    })
    .as_ref()
}

/// The sequential reference path; `par_map` must agree with this exactly.
pub fn seq_map<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_matches_seq_order() {
        let par = par_map(100, |i| i * i);
        let seq = seq_map(100, |i| i * i);
        assert_eq!(par, seq);
    }

    #[test]
    fn empty_and_single() {
        assert_eq!(par_map(0, |i| i), Vec::<usize>::new());
        assert_eq!(par_map(1, |i| i + 7), vec![7]);
    }
}
