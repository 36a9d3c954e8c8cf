//! Execution strategy injection.
//!
//! Client updates within a round and Monte-Carlo trials are independent given
//! their derived seeds, so they may run on any number of workers. The core
//! stays `no_std`; callers hand in a [`TaskPool`] (the companion crate ships a
//! threaded one) and results are collected in index order, making outputs
//! invariant to scheduling.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::any::Any;

/// Type-erased task output.
pub type TaskItem = Box<dyn Any + Send>;

/// Maps a function over `0..n`, returning outputs in index order.
pub trait TaskPool: Sync {
    fn map_indexed(&self, n: usize, f: &(dyn Fn(usize) -> TaskItem + Send + Sync))
        -> Vec<TaskItem>;
}

/// Runs every task on the calling thread.
pub struct SerialPool;

impl TaskPool for SerialPool {
    fn map_indexed(
        &self,
        n: usize,
        f: &(dyn Fn(usize) -> TaskItem + Send + Sync),
    ) -> Vec<TaskItem> {
        (0..n).map(f).collect()
    }
}

/// Typed wrapper over [`TaskPool::map_indexed`].
pub fn pool_map<T: Send + 'static>(
    pool: &dyn TaskPool,
    n: usize,
    f: impl Fn(usize) -> T + Send + Sync,
) -> Vec<T> {
    pool.map_indexed(n, &|i| Box::new(f(i)) as TaskItem)
        .into_iter()
        .map(|item| {
            *item
                .downcast::<T>()
                .expect("task pool returned a foreign output type")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_pool_preserves_order() {
        let out = pool_map(&SerialPool, 5, |i| i * i);
        assert_eq!(out, alloc::vec![0, 1, 4, 9, 16]);
    }
}
