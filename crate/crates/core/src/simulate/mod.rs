//! Reproducible path generation and replicate batches.
//!
//! Every replicate owns a counter-based stream, so a batch is a pure
//! function of `(model, n, R, seed, past)` whatever the thread count.

mod batch;
mod path;
mod pasts;
pub mod streams;

pub use batch::{replicate_batch, with_workers, BatchOptions, ReplicateBatch, MAX_REPLICATES};
pub use pasts::{draw_past, draw_pasts};
pub use path::{
    sample_path, sample_path_with, Convolution, PartialSumTrajectory, TerminalStats, FFT_MIN_LAG,
    MAX_PATH_COORDINATES,
};
