//! Data-parallel dispatch with a sequential fallback.
//!
//! The `parallel` feature (on by default) routes [`map_indices`] through
//! rayon; without it the same call runs serially. Work is always mapped
//! *by index* and collected in index order, and reductions stay serial in
//! the callers, so results are bit-identical with and without the feature
//! and at any thread count.

/// Map `f` over `0..n`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indices_seq(n, f)
}

/// Always-sequential counterpart of [`map_indices`], for callers that
/// need serial execution regardless of features (and for benchmarks).
pub fn map_indices_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
