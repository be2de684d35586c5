//! Causal discovery among generalized-linear primary variables using
//! instrumental variables, truncated-ℓ1 constrained fits, peeling and
//! deconfounded regression.
//!
//! The stages are [`fidelity::fit_fidelity`], [`peel::peel`] and
//! [`deconfound::run`]; [`pipeline::run_pipeline`] chains them.

pub mod data;
pub mod deconfound;
pub mod error;
pub mod fidelity;
pub mod glm;
pub mod metrics;
pub mod peel;
pub mod pipeline;
pub mod select;
pub mod sim;
pub mod tlp;
pub mod tuned;

pub use data::Dataset;
pub use deconfound::{DagEstimate, Method};
pub use error::{GampiError, Result};
pub use fidelity::FidelityMatrix;
pub use glm::{DesignProblem, Family, FitOptions, FitResult};
pub use metrics::EvalReport;
pub use peel::SuperGraph;
pub use pipeline::{run_pipeline, PipelineConfig, PipelineOutput, Stage};
pub use select::{TuningMethod, TuningPolicy};
pub use sim::{GraphKind, Outcome, SimConfig};
pub use tlp::TlpConfig;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
