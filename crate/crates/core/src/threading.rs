//! Thread-pool setup and deterministic parallel reductions.
//!
//! All parallel loops in this crate either write disjoint slices or reduce
//! over a partition that is fixed by the data layout (one partial per z-plane,
//! combined in plane order). Results are therefore bitwise identical for any
//! thread count, including 1. The `VORLAB_THREADS` environment variable caps
//! the pool size; unset means one thread per available core.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

pub fn thread_count_from_env() -> usize {
    std::env::var("VORLAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// The crate-wide pool. Built once, on first use.
pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(thread_count_from_env())
            .build()
            .expect("failed to build thread pool")
    })
}

/// Map `f` over equal chunks of `data` in parallel, writing in place.
/// `chunk` must evenly divide `data.len()`.
pub fn par_chunks_mut<T: Send, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    debug_assert_eq!(data.len() % chunk, 0);
    pool().install(|| {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    });
}

/// Deterministic sum reduction: one partial per fixed-size chunk, partials
/// combined sequentially in chunk order regardless of thread count.
pub fn par_sum_chunks<T: Sync, F>(data: &[T], chunk: usize, f: F) -> f64
where
    F: Fn(usize, &[T]) -> f64 + Sync,
{
    use rayon::prelude::*;
    debug_assert_eq!(data.len() % chunk, 0);
    let partials: Vec<f64> = pool().install(|| {
        data.par_chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i, c))
            .collect()
    });
    partials.iter().sum()
}

/// Deterministic multi-accumulator reduction over chunk index space
/// (no data slice; the closure indexes shared state itself).
pub fn par_sum_index<F>(chunks: usize, accs: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    use rayon::prelude::*;
    let partials: Vec<Vec<f64>> = pool().install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; accs];
                f(i, &mut acc);
                acc
            })
            .collect()
    });
    let mut total = vec![0.0; accs];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Deterministic max reduction over chunk index space.
pub fn par_max_index<F>(chunks: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    use rayon::prelude::*;
    let partials: Vec<f64> = pool().install(|| (0..chunks).into_par_iter().map(f).collect());
    partials.into_iter().fold(f64::NEG_INFINITY, f64::max)
}
