//! Pluggable work distribution.
//!
//! Core routines that fan out over instances take an [`Executor`]. The
//! executor only decides *where* each indexed job runs; results are always
//! returned in index order, and all reductions happen sequentially in the
//! caller, so outputs are bit-identical for any executor.

use alloc::vec::Vec;

pub trait Executor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every job on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}
