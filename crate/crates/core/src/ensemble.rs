//! Path-ensemble orchestration.
//!
//! Paths are grouped into fixed-size chunks that depend only on the plan,
//! never on the worker count. Chunks are reduced in parallel and then merged
//! sequentially in chunk order, so the floating-point result is identical
//! for any number of workers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::PathStream;
use crate::verify::Merge;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsemblePlan {
    pub n_paths: u64,
    pub seed: u64,
    pub chunk_paths: u64,
    pub workers: usize,
}

impl EnsemblePlan {
    pub fn new(n_paths: u64, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            chunk_paths: 1024,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_chunk_paths(mut self, chunk_paths: u64) -> Self {
        self.chunk_paths = chunk_paths;
        self
    }
}

/// Work done for one path.
pub trait PathTask: Sync {
    type Acc: Merge + Send;
    type Scratch;

    fn accumulator(&self) -> Self::Acc;
    fn scratch(&self) -> Self::Scratch;
    fn run_path(
        &self,
        stream: &mut PathStream,
        scratch: &mut Self::Scratch,
        acc: &mut Self::Acc,
    ) -> Result<()>;
}

pub fn run_ensemble<T: PathTask>(task: &T, plan: &EnsemblePlan) -> Result<T::Acc> {
    if plan.n_paths == 0 {
        return Err(Error::config("n_paths", "must be >= 1"));
    }
    if plan.chunk_paths == 0 {
        return Err(Error::config("chunk_paths", "must be >= 1"));
    }
    if plan.workers == 0 {
        return Err(Error::config("workers", "must be >= 1"));
    }
    let n_chunks = plan.n_paths.div_ceil(plan.chunk_paths);
    let run_chunk = |c: u64| -> Result<T::Acc> {
        let start = c * plan.chunk_paths;
        let end = (start + plan.chunk_paths).min(plan.n_paths);
        let mut acc = task.accumulator();
        let mut scratch = task.scratch();
        for path in start..end {
            let mut stream = PathStream::new(plan.seed, path);
            task.run_path(&mut stream, &mut scratch, &mut acc)?;
        }
        Ok(acc)
    };
    let partials: Vec<T::Acc> = if plan.workers == 1 {
        (0..n_chunks).map(run_chunk).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| Error::Pool(e.to_string()))?;
        pool.install(|| {
            (0..n_chunks)
                .into_par_iter()
                .map(run_chunk)
                .collect::<Result<_>>()
        })?
    };
    let mut iter = partials.into_iter();
    let mut total = iter.next().expect("at least one chunk");
    for part in iter {
        total.merge(part);
    }
    Ok(total)
}
