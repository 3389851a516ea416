//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel path in the crate goes through these two functions. Work
//! is split into index-addressed pieces whose results are gathered in index
//! order, so outputs never depend on the thread count or on scheduling.
//! Without the `parallel` feature both modes run sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Parallel,
    Sequential,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Calls `f(chunk_index, chunk)` for consecutive `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0);
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => data
            .par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c)),
        _ => data
            .chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c)),
    }
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}
