//! Experiment orchestration: simulation vs. limit-process comparisons over ε-sweeps,
//! hitting-time tables and the two-dimensional vector-field data set.
//!
//! Everything here is deterministic given an [`ExperimentConfig`]; the ε-sweeps run in
//! parallel and results are assembled in a fixed order.

mod compare;
mod config;
mod figure1;
mod hitting;
pub mod output;

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::fixed_points::FixedPointError;
use crate::lcp::LcpError;
use crate::limit_process::PathError;
use crate::problem::ProblemError;

pub use compare::{compare_instance, run_compare, CompareProfile, CompareRow, CompareRun, ComparisonReport, ProfileSample};
pub use config::{read_instance_file, ExperimentConfig, GridSpec, InstanceSource, LoadedInstance};
pub use figure1::{run_figure1, Figure1Output};
pub use hitting::{hitting_instance, run_hitting, HittingRow, HittingTable};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Lcp(#[from] LcpError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("expected dimension {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in output {0}")]
    NonFiniteOutput(String),
    #[error("run failed after {} completed rows: {source}", completed.rows.len())]
    Partial {
        completed: Box<ComparisonReport>,
        source: Box<ExperimentError>,
    },
}

/// Coarse failure classes, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad input, I/O or configuration.
    Input,
    /// The instance breaks the sign assumptions (or is not a K-matrix).
    Assumption,
    /// Integrator, solver or consistency failure.
    Numerical,
    /// Rejection sampling ran out of attempts.
    Budget,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Input => 1,
            ErrorCategory::Assumption => 2,
            ErrorCategory::Numerical => 3,
            ErrorCategory::Budget => 4,
        }
    }
}

fn problem_category(e: &ProblemError) -> ErrorCategory {
    match e {
        ProblemError::AssumptionViolated(_) => ErrorCategory::Assumption,
        ProblemError::RejectionBudgetExceeded { .. } => ErrorCategory::Budget,
        ProblemError::NotPositiveDefinite { .. } => ErrorCategory::Numerical,
        ProblemError::NonFinite
        | ProblemError::ShapeMismatch(_)
        | ProblemError::NotSymmetric(..)
        | ProblemError::DegenerateScale { .. }
        | ProblemError::InconsistentProvenance { .. }
        | ProblemError::InvalidInitialization(_) => ErrorCategory::Input,
    }
}

fn lcp_category(e: &LcpError) -> ErrorCategory {
    match e {
        LcpError::NotKMatrix(_) => ErrorCategory::Assumption,
        LcpError::ShapeMismatch(_) | LcpError::NonFinite | LcpError::DimensionTooLarge { .. } => {
            ErrorCategory::Input
        }
        _ => ErrorCategory::Numerical,
    }
}

impl ExperimentError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            ExperimentError::Config(_)
            | ExperimentError::Io { .. }
            | ExperimentError::Json(_)
            | ExperimentError::Csv(_)
            | ExperimentError::DimensionMismatch { .. } => ErrorCategory::Input,
            ExperimentError::Problem(e) => problem_category(e),
            ExperimentError::Lcp(e) => lcp_category(e),
            ExperimentError::FixedPoint(FixedPointError::DimensionTooLarge { .. })
            | ExperimentError::FixedPoint(FixedPointError::IndexOutOfRange { .. }) => ErrorCategory::Input,
            ExperimentError::FixedPoint(_) => ErrorCategory::Numerical,
            ExperimentError::Dynamics(e) => match e {
                DynamicsError::Problem(p) => problem_category(p),
                DynamicsError::InvalidGrid(_)
                | DynamicsError::InvalidEta { .. }
                | DynamicsError::DimensionMismatch(_)
                | DynamicsError::OutOfRange { .. } => ErrorCategory::Input,
                _ => ErrorCategory::Numerical,
            },
            ExperimentError::Path(e) => match e {
                PathError::Problem(p) => problem_category(p),
                PathError::Lcp(l) => lcp_category(l),
                PathError::NonPositiveS(_) | PathError::InvalidK { .. } | PathError::AtBreakpoint { .. } => {
                    ErrorCategory::Input
                }
                _ => ErrorCategory::Numerical,
            },
            ExperimentError::NonFiniteOutput(_) => ErrorCategory::Numerical,
            ExperimentError::Partial { source, .. } => source.category(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

/// `true` when every entry is strictly below its predecessor; `None` for fewer than two.
pub(crate) fn strictly_decreasing(values: &[f64]) -> Option<bool> {
    if values.len() < 2 {
        return None;
    }
    Some(values.windows(2).all(|p| p[1] < p[0]))
}
