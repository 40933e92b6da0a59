//! Stationary-process laboratory: coefficient sequences and summability
//! conditions, causal linear / semi-linear / Hölder process models with exact
//! oracles, reproducible Monte Carlo, martingale approximation and
//! distributional tests.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod martingale;
pub mod models;
pub mod numeric;
pub mod sequences;
pub mod simulate;
pub mod stats;

pub use error::{LabError, Result};
