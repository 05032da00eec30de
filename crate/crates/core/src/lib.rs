//! Uncertainty-aware fairness (UCerF) evaluation for minimal-pair
//! co-reference benchmarks.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus`]: samples, minimal pairs, the occupation registry and dataset I/O.
//! - [`uncertainty`]: class distributions and normalized certainty estimators.
//! - [`metrics`]: desirability, sample-wise and group-wise UCerF, equalized odds,
//!   accuracy, perplexity and the fairness-performance product.
//! - [`tasks`]: intrinsic and multiple-choice prompt construction and judging.
//! - [`predlog`]: the prediction log, the single source of truth for metrics.
//! - [`evaluate`]: turns a dataset plus a prediction log into a [`evaluate::MetricReport`].
//! - [`report`]: ranked multi-model tables, scatter data and emitters.
//! - [`pipeline`]: dataset construction and validation.

pub mod corpus;
pub mod evaluate;
pub mod metrics;
pub mod numeric;
pub mod pipeline;
pub mod predlog;
pub mod report;
pub mod tasks;
pub mod uncertainty;
