//! Orbit-parallel execution with an order-fixed reduction.

use rayon::prelude::*;
use std::ops::Range;

/// Default number of batches an orbit population is split into. Batches are
/// the unit of parallel work and of batch-means error estimates.
pub const DEFAULT_BATCHES: usize = 100;

/// Contiguous orbit-index range of batch `b` out of `n_batches`.
pub fn batch_range(n_items: u64, n_batches: usize, b: usize) -> Range<u64> {
    let nb = n_batches as u128;
    let lo = (b as u128 * n_items as u128 / nb) as u64;
    let hi = ((b as u128 + 1) * n_items as u128 / nb) as u64;
    lo..hi
}

/// Runs `f(batch_index, orbit_range)` for every batch on a pool of `threads`
/// workers (`0` = rayon default) and returns the results in batch order.
pub fn map_batches<T, F>(n_items: u64, n_batches: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, Range<u64>) -> T + Sync,
{
    let n_batches = n_batches.max(1).min(n_items.max(1) as usize);
    let run = || {
        (0..n_batches)
            .into_par_iter()
            .map(|b| f(b, batch_range(n_items, n_batches, b)))
            .collect::<Vec<T>>()
    };
    if threads == 1 {
        return (0..n_batches)
            .map(|b| f(b, batch_range(n_items, n_batches, b)))
            .collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_everything_once() {
        let ranges: Vec<_> = (0..7).map(|b| batch_range(100, 7, b)).collect();
        assert_eq!(ranges[0].start, 0);
        assert_eq!(ranges[6].end, 100);
        for w in ranges.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn result_order_is_batch_order() {
        let a = map_batches(1000, 10, 1, |b, r| (b, r.start));
        let b = map_batches(1000, 10, 4, |b, r| (b, r.start));
        assert_eq!(a, b);
        assert_eq!(map_batches(3, 100, 2, |b, _| b).len(), 3);
    }
}
