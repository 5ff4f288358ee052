//! Ordered chunked execution on a fixed-size worker pool.
//!
//! Work is split into chunks of a fixed size that does not depend on the
//! number of workers, and results come back in chunk order, so outputs are
//! identical for any worker count.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::LabError;

pub fn pool(workers: usize) -> Result<ThreadPool, LabError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| LabError::Pool(e.to_string()))
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs `f(first, count)` over consecutive chunks of `0..n_items`.
pub fn map_chunks<T, E, F>(pool: &ThreadPool, n_items: usize, chunk: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, usize) -> Result<T, E> + Sync,
{
    let chunk = chunk.max(1);
    let n_chunks = n_items.div_ceil(chunk);
    pool.install(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|k| {
                let first = k * chunk;
                f(first, chunk.min(n_items - first))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_in_order() {
        for workers in [1, 3] {
            let p = pool(workers).unwrap();
            let out: Vec<Vec<usize>> =
                map_chunks(&p, 21, 8, |first, count| Ok::<_, ()>((first..first + count).collect())).unwrap();
            assert_eq!(out.concat(), (0..21).collect::<Vec<_>>());
            assert_eq!(out.len(), 3);
        }
    }
}
