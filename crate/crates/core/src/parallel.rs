//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these fan out over rayon;
//! without it they run plain loops. Every helper is shaped so that each
//! output element is produced by a self-contained sequential computation
//! and reductions happen in a fixed order, so results are bitwise
//! identical whichever mode is compiled in and however many threads run.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::scalar::Scalar;

/// Splits `data` into consecutive `chunk` sized pieces and applies `f`
/// to each along with its chunk index.
#[cfg(feature = "parallel")]
pub fn for_each_chunk_mut<T: Send, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Sync,
{
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]),
{
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Maps `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_collect<R: Send, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<R, F>(n: usize, f: F) -> Vec<R>
where
    F: Fn(usize) -> R,
{
    (0..n).map(f).collect()
}

/// Sum of `f(i)` for i in 0..n, reduced in index order. Each term may be
/// computed on any thread; the final fold is sequential so the floating
/// point result does not depend on scheduling.
pub fn sum_ordered<T, F>(n: usize, f: F) -> T
where
    T: Scalar,
    F: Fn(usize) -> T + Sync + Send,
{
    map_collect(n, f).into_iter().fold(T::zero(), |a, b| a + b)
}

/// True when compiled with rayon support.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
