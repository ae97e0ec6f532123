//! Piecewise exponential (PWE) hazard models for right-censored survival data.
//!
//! - [`distribution`]: the PWE family and its right-truncated conditional.
//! - [`survdata`]: censored samples, Kaplan–Meier, data cut-off.
//! - [`estimation`]: likelihood, closed-form hazard MLEs, change-point search.
//! - [`resampling`]: case bootstrap and cross-validated log-likelihood.
//! - [`prediction`]: Monte Carlo event and timeline prediction.
//! - [`simulation`]: synthetic trials and design-stage follow-up summaries.
//! - [`io`]: CSV/JSON readers and writers shared with the CLI.

pub mod distribution;
pub mod error;
pub mod estimation;
pub mod io;
pub mod prediction;
pub mod resampling;
pub mod rng;
pub mod serde_inf;
pub mod simulation;
pub mod stats;
pub mod survdata;

pub use distribution::PweModel;
pub use error::{Error, Result};
pub use survdata::{CensorReason, KmCurve, Observation, SurvSample};
pub use estimation::{fit, FitConfig, FitResult, Optimizer};
