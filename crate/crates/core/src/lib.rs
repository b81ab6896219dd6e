//! Extubation-failure prediction from irregularly sampled ICU time series.
//!
//! The pipeline runs cohort construction → frequency-aware preprocessing →
//! fused temporal models (or a boosted-tree baseline) → evaluation.

pub mod artifact;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod gbdt;
pub mod preprocess;
pub mod temporal;
pub mod tensorcore;
pub mod training;

pub use error::{Error, Result};
