//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan out over rayon; without it,
//! or inside [`with_serial`], they run on the calling thread. Every helper
//! hands each output chunk to exactly one closure invocation and each
//! invocation reduces in a fixed order, so results are bit-identical across
//! both paths and across thread counts.

use std::cell::Cell;

thread_local! {
    static FORCE_SERIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with parallel dispatch disabled on the current thread.
pub fn with_serial<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SERIAL.with(|c| c.replace(true));
    let out = f();
    FORCE_SERIAL.with(|c| c.set(prev));
    out
}

/// Whether the helpers in this module will use worker threads right now.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SERIAL.with(|c| c.get())
}

// Below this many scalar multiply-adds a kernel is not worth splitting.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 16;

/// Calls `f(chunk_index, chunk)` for every `chunk_len`-sized chunk of `out`.
///
/// `work` estimates the total multiply-add count and gates the fan-out.
pub fn chunks_mut<T, F>(out: &mut [T], chunk_len: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if work >= MIN_PARALLEL_WORK && is_parallel() {
            use rayon::prelude::*;
            let chunks = out.len().div_ceil(chunk_len);
            let per_chunk = (work / chunks).max(1);
            out.par_chunks_mut(chunk_len)
                .with_min_len((MIN_PARALLEL_WORK / per_chunk).max(1))
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    let _ = work;
    out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `f` over `items`, preserving order, with at most `workers` threads.
///
/// `workers == 0` means "use the global pool".
pub fn map_ordered<I, O, F>(items: Vec<I>, workers: usize, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && workers != 1 && items.len() > 1 {
            use rayon::prelude::*;
            let run = || items.into_par_iter().map(&f).collect::<Vec<_>>();
            if workers == 0 {
                return run();
            }
            return match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                Ok(pool) => pool.install(run),
                Err(_) => run(),
            };
        }
    }
    let _ = workers;
    items.into_iter().map(f).collect()
}

/// Runs `f` with kernel fan-out limited to `workers` threads; 0 keeps the
/// global pool and 1 runs serially.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 1 {
        return with_serial(f);
    }
    #[cfg(feature = "parallel")]
    {
        if workers > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                return pool.install(f);
            }
        }
    }
    f()
}
