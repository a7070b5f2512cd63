//! Data-parallel execution with a sequential fallback.
//!
//! Work is always split into the same shards regardless of how it is
//! executed, and shard results are returned in shard order, so parallel and
//! sequential runs produce bit-identical output. With the `parallel` feature
//! disabled, [`Execution::Parallel`] silently runs sequentially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Samples per Monte-Carlo shard. Part of the reproducibility contract:
/// changing it changes every seeded Monte-Carlo estimate.
pub const SHARD_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
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

/// Sizes the global worker pool. Must run before any parallel work; `1`
/// is honoured by returning [`Execution::Sequential`].
pub fn configure_workers(jobs: usize) -> crate::Result<Execution> {
    if jobs == 0 {
        return Err(crate::Error::Config("--jobs must be at least 1".into()));
    }
    if jobs == 1 {
        return Ok(Execution::Sequential);
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| crate::Error::Config(format!("cannot size worker pool: {e}")))?;
    Ok(Execution::default())
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Splits `n_samples` into fixed-size shards; returns `(shard_index, len)`.
pub fn shards(n_samples: usize) -> Vec<(usize, usize)> {
    (0..n_samples.div_ceil(SHARD_SIZE))
        .map(|i| (i, SHARD_SIZE.min(n_samples - i * SHARD_SIZE)))
        .collect()
}

/// Independent RNG stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs a sharded Monte-Carlo sum. Each shard gets its own RNG stream derived
/// from `seed`; partial results are folded left-to-right in shard order.
pub fn sharded_sum<T, F, G>(n_samples: usize, seed: u64, exec: Execution, shard: F, mut fold: G) -> Option<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
    G: FnMut(T, T) -> T,
{
    let plan = shards(n_samples);
    let parts = map_indexed(plan.len(), exec, |i| {
        let (idx, len) = plan[i];
        let mut rng = stream_rng(seed, idx as u64);
        shard(&mut rng, len)
    });
    let mut it = parts.into_iter();
    let first = it.next()?;
    Some(it.fold(first, &mut fold))
}
