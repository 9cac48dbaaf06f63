//! Deterministic parallel reduction: work is cut into fixed chunks whose
//! results are combined in chunk order, so sums do not depend on the number of
//! worker threads.

use rayon::prelude::*;

pub const DEFAULT_CHUNK: usize = 64;

/// Runs `f` on each `[start, end)` chunk of `0..n` and returns the chunk
/// results in order.
pub fn map_chunks<T, F>(n: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = n.div_ceil(chunk);
    (0..count)
        .into_par_iter()
        .map(|c| f(c * chunk, ((c + 1) * chunk).min(n)))
        .collect()
}

/// Elementwise sum of equally sized vectors, in order.
pub fn sum_in_order(parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut it = parts.into_iter();
    let mut acc = match it.next() {
        Some(v) => v,
        None => return Vec::new(),
    };
    for v in it {
        for (a, b) in acc.iter_mut().zip(v) {
            *a += b;
        }
    }
    acc
}

/// Builds a pool of `workers` threads (`0` keeps rayon's default) and runs `f` in it.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("falling back to the global pool: {e}");
            f()
        }
    }
}
