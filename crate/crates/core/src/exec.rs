//! Node-level data parallelism.
//!
//! Every tree level is stored as one contiguous buffer of `nodes * dim`
//! values. The helpers here visit those per-node chunks either through rayon
//! (feature `parallel`) or sequentially. Each chunk is written by exactly one
//! closure call, so results do not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Smallest number of nodes handed to one rayon task.
#[cfg(feature = "parallel")]
const MIN_NODES_PER_TASK: usize = 8;

/// Calls `f(node_index, chunk)` for every `dim`-sized chunk of `data`.
pub fn for_each_node<F>(data: &mut [f64], dim: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if dim == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(dim)
            .with_min_len(MIN_NODES_PER_TASK)
            .enumerate()
            .for_each(|(j, chunk)| f(j, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(dim).enumerate().for_each(|(j, chunk)| f(j, chunk));
    }
}

/// Evaluates `f(i)` for `i in 0..count` and collects the results in index order.
pub fn map_range<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Runs two independent closures, concurrently when the `parallel` feature is on.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

/// True when this build dispatches node work to rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
