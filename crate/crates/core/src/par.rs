//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers fan out over rayon's pool unless
//! sequential execution was requested at runtime. Results are always returned
//! in input order, so reductions performed by callers over the returned
//! vectors are deterministic regardless of thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Forces sequential execution even when the `parallel` feature is enabled.
pub fn set_sequential(on: bool) {
    SEQUENTIAL.store(on, Ordering::Relaxed);
}

pub fn is_parallel_available() -> bool {
    cfg!(feature = "parallel")
}

pub fn is_parallel() -> bool {
    is_parallel_available() && !SEQUENTIAL.load(Ordering::Relaxed)
}

/// Maps `f` over consecutive chunks of `items`; `f` receives the offset of
/// the chunk's first element.
pub fn map_chunks<T, U, F>(items: &[T], chunk: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &[T]) -> U + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items
            .par_chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i * chunk, c))
            .collect();
    }
    items.chunks(chunk).enumerate().map(|(i, c)| f(i * chunk, c)).collect()
}

/// Maps `f` over `0..n`.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Runs `f` with at most `threads` workers for the helpers above. Without
/// the `parallel` feature this simply calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        return pool.install(f);
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_offsets_and_order() {
        let v: Vec<usize> = (0..10).collect();
        let out = map_chunks(&v, 3, |off, c| (off, c.iter().sum::<usize>()));
        assert_eq!(out, vec![(0, 3), (3, 12), (6, 21), (9, 9)]);
    }

    #[test]
    fn indexed_in_order() {
        assert_eq!(map_indexed(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }

    #[test]
    fn bounded_pool() {
        let out = with_threads(2, || map_indexed(4, |i| i + 1));
        assert_eq!(out, vec![1, 2, 3, 4]);
    }
}
