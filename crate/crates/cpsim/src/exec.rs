//! Data-parallel execution shim. With the default `parallel` feature the
//! batch helpers fan out over rayon; without it they run sequentially with
//! identical results, since every work item owns its derived RNG stream.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map a function over items, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map a function over items, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_batch<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Always-sequential variant, kept available for benchmarking the parallel
/// path against a like-for-like baseline.
pub fn map_batch_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let items: Vec<u64> = (0..100).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e3779b97f4a7c15) ^ (x >> 3);
        assert_eq!(map_batch(&items, f), map_batch_sequential(&items, f));
    }
}
