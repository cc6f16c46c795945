//! Seed derivation and the data-parallel map used for tiles, sweep points,
//! and Monte Carlo trials.
//!
//! With the `parallel` feature (default) the map runs on rayon; without it
//! the same call is a plain sequential loop. Results come back in input
//! order either way, so outputs are identical across both builds and any
//! thread count.

/// splitmix64 finalizer; decorrelates consecutive integer tags.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a tag path
/// (e.g. [tile index] or [row, col]).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Sequential build of [`map_indexed`].
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync,
{
    map_indexed_serial(items, f)
}

/// Always-sequential map, kept as the baseline for benchmarks.
pub fn map_indexed_serial<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}
