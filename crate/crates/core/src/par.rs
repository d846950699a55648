//! Data-parallel map with a sequential fallback.
//!
//! With the default `parallel` feature, independent work items (frames,
//! repetitions, sweep points) run on the rayon pool. Without it, or after
//! [`force_sequential`], the same call sites run sequentially. Both paths
//! produce element-wise identical output: each item owns its seeds and
//! results are collected in input order, never reduced in a pool-dependent
//! order.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Routes all subsequent [`map_ordered`] calls through the sequential path
/// even in a parallel build.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    if FORCE_SEQUENTIAL.load(Ordering::SeqCst) {
        items.into_iter().map(f).collect()
    } else {
        items.into_par_iter().map(f).collect()
    }
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Whether this process runs data-parallel loops on rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}
