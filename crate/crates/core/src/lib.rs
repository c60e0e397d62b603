//! Detection and localization of anomalously correlated sensor groups.
//!
//! The pipeline runs in five stages, one module each:
//!
//! 1. [`detrend`]: subtract a centered running mean from every sensor stream.
//! 2. [`corr`]: Pearson correlation of the residuals over a trailing window,
//!    with the diagonal set to zero.
//! 3. [`spectral`]: eigen-spectrum of that matrix and the spectral-gap test
//!    `Δ₁ > Δ₂ + δ`, where `δ` is the RMS of the interior eigenvalue spacings.
//! 4. [`localize`]: when the test fires, pick the `k` sensors forming the
//!    anomalous block (sparse rank-1 approximation, LAS or IGP biclustering).
//! 5. [`identify`]: rank label tags by hypergeometric enrichment within the
//!    selected group.
//!
//! [`ingest`] reads sensor CSVs and label files, [`synth`] generates
//! ground-truthed inputs, and [`harness`] wires the stages together and runs
//! the benchmark experiments.

pub mod corr;
pub mod detrend;
pub mod error;
pub mod harness;
pub mod identify;
pub mod ingest;
pub mod localize;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
