//! Privacy-fairness auditing toolkit.
//!
//! Trains small classifiers under SGD, DP-SGD, or DP-SGD-S, runs
//! membership-inference auditing games against them, and reports
//! individual and group privacy risk, group privacy-risk parity, group
//! gradient contribution, and outcome-fairness metrics.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`dataio`]: dataset ingestion (IDX images, CSV, synthetic blobs),
//!   splits, and the binary container format;
//! - [`model`]: the three fixed architectures with exact per-sample
//!   gradients;
//! - [`train`]: the three training algorithms with clipping, noise, and
//!   contribution instrumentation;
//! - [`accountant`]: Renyi-DP accounting and noise calibration;
//! - [`audit`]: the auditing games and threshold adversaries;
//! - [`stats`]: risk, comparison, and fairness statistics.
//!
//! With the default `parallel` feature, audit rounds and per-sample
//! gradient batches run on a rayon pool; results are folded positionally so
//! parallel and sequential execution are bit-identical.

pub mod accountant;
pub mod audit;
pub mod dataio;
pub mod exec;
pub mod model;
pub mod rng;
pub mod special;
pub mod stats;
pub mod train;
