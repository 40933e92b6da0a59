use rayon::prelude::*;
use serde::Serialize;

use super::path::{prepare, replicate_stats, TerminalStats, Workspace};
use super::streams::{domain, stream, stream_key};
use crate::error::{LabError, Result};
use crate::models::{Coord, ProcessModel, Projection};

/// Largest replicate count held in one batch.
pub const MAX_REPLICATES: usize = 1 << 26;

/// Terminal statistics of `R` replicates; replicate `i` runs on stream
/// `(key(seed, PATHS), i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateBatch {
    pub n: usize,
    pub master_seed: u64,
    pub stream_key: u64,
    pub stats: Vec<TerminalStats>,
}

impl ReplicateBatch {
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// `S_n / √n` for every replicate.
    pub fn normalized_sums(&self) -> Vec<f64> {
        let r = (self.n as f64).sqrt();
        self.stats.iter().map(|s| s.s_n / r).collect()
    }

    /// `n^{-1/2} max(0, max_k S_k)` for every replicate.
    pub fn normalized_sup(&self) -> Vec<f64> {
        let r = (self.n as f64).sqrt();
        self.stats.iter().map(|s| s.max_s.max(0.0) / r).collect()
    }
}

/// Batch options beyond the model and horizon.
#[derive(Debug, Clone, Default)]
pub struct BatchOptions<'a> {
    /// Pinned `ω_0, ω_{-1}, …` in native form.
    pub past: Option<&'a [Coord]>,
    pub martingale: Option<&'a Projection>,
    /// `E(X_k | F_0)` for `k = 1, 2, …`, removed from the deviation
    /// `S_k − M_k` (missing entries count as zero).
    pub drift: &'a [f64],
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(w) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| LabError::Budget(format!("cannot start {w} workers: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

pub fn replicate_batch(
    model: &ProcessModel,
    n: usize,
    replicates: usize,
    master_seed: u64,
    options: &BatchOptions<'_>,
) -> Result<ReplicateBatch> {
    if replicates == 0 {
        return Err(LabError::param("replicates", "must be ≥ 1"));
    }
    if replicates > MAX_REPLICATES {
        return Err(LabError::Budget(format!("at most {MAX_REPLICATES} replicates per batch")));
    }
    prepare(model, n, options.past)?;
    let run = || -> Result<Vec<TerminalStats>> {
        (0..replicates as u64)
            .into_par_iter()
            .map_init(
                || Workspace::new(model),
                |ws, i| {
                    let id = stream(master_seed, domain::PATHS, i);
                    replicate_stats(model, n, id, options.past, options.martingale, options.drift, ws)
                },
            )
            .collect()
    };
    let stats = with_workers(options.workers, run)??;
    Ok(ReplicateBatch {
        n,
        master_seed,
        stream_key: stream_key(master_seed, domain::PATHS),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CausalLinearModel, InnovationSpace};
    use crate::sequences::CoefficientSequence;
    use crate::simulate::path::sample_path;

    fn geometric() -> ProcessModel {
        ProcessModel::Linear(
            CausalLinearModel::new(
                CoefficientSequence::geometric(0.5).unwrap(),
                InnovationSpace::rademacher(),
                None,
            )
            .unwrap(),
        )
    }

    #[test]
    fn single_replicate_equals_sample_path() {
        let m = geometric();
        let b = replicate_batch(&m, 100, 1, 42, &BatchOptions::default()).unwrap();
        let p = sample_path(&m, 100, stream(42, domain::PATHS, 0), None, None).unwrap();
        assert_eq!(b.stats[0].s_n, p.terminal().s_n);
        assert_eq!(b.stats[0].max_s, p.terminal().max_s);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let m = geometric();
        let one = replicate_batch(
            &m,
            64,
            300,
            7,
            &BatchOptions {
                workers: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let many = replicate_batch(
            &m,
            64,
            300,
            7,
            &BatchOptions {
                workers: Some(8),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn zero_replicates_rejected() {
        assert!(replicate_batch(&geometric(), 8, 0, 0, &BatchOptions::default()).is_err());
    }
}
