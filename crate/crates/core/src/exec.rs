//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) [`ExecMode::Parallel`] runs on the
//! current rayon pool; without it, or with [`ExecMode::Sequential`], every
//! helper runs on the calling thread. Results are identical either way: maps
//! preserve index order and reductions are order-insensitive.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// `(0..count).map(f)` collected in index order.
pub fn map_indices<T, E, F>(mode: ExecMode, count: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && count > 1 {
        return (0..count).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..count).map(f).collect()
}

/// Minimum of `f(i)` over `0..count`, ties broken toward the smaller index.
/// Returns `(value, index)`; `None` when `count == 0`.
pub fn min_by_index<E, F>(mode: ExecMode, count: u64, f: F) -> Result<Option<(f64, u64)>, E>
where
    E: Send,
    F: Fn(u64) -> Result<f64, E> + Sync + Send,
{
    fn better(a: (f64, u64), b: (f64, u64)) -> (f64, u64) {
        match a.0.total_cmp(&b.0) {
            std::cmp::Ordering::Less => a,
            std::cmp::Ordering::Greater => b,
            std::cmp::Ordering::Equal => {
                if a.1 <= b.1 {
                    a
                } else {
                    b
                }
            }
        }
    }
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && count > 1 {
        return (0..count).into_par_iter().map(|i| f(i).map(|v| Some((v, i)))).try_reduce(
            || None,
            |a, b| {
                Ok(match (a, b) {
                    (Some(a), Some(b)) => Some(better(a, b)),
                    (a, None) => a,
                    (None, b) => b,
                })
            },
        );
    }
    let _ = mode;
    let mut best: Option<(f64, u64)> = None;
    for i in 0..count {
        let v = (f(i)?, i);
        best = Some(best.map_or(v, |b| better(b, v)));
    }
    Ok(best)
}

/// Runs `f` on a dedicated pool of `threads` workers (when parallel support
/// is compiled in and `threads > 0`); otherwise runs it directly.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build worker pool");
        return pool.install(f);
    }
    let _ = threads;
    f()
}

/// Pairwise (cascade) summation; the result depends only on the slice order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
