//! Multi-robot multi-target tracking (MR-MTT) performance analysis.
//!
//! The crate covers the full pipeline: simulate robot teams searching for
//! static targets, measure tracking error (OSPA) and exploration
//! inefficiency over time, fit parametric decay models to the traces, and
//! learn a dimensionless variable `Pi(theta)` together with polynomial links
//! that predict team performance for unseen team/task configurations.

pub mod dataset;
pub mod dimension;
pub mod learner;
pub mod metrics;
pub mod models;
pub mod sim;

pub use dimension::{
    DimensionalMatrix, GammaVector, NullBasis, TeamTaskParams, WVector,
};
pub use metrics::{MetricKind, PerfTrace, TargetSet};
pub use models::{ModelKind, ModelParams};
