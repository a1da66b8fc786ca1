//! Metrics, standardized score aggregation, scaling trends and power-law
//! fits.
//!
//! Metrics that are undefined on their input (one class, zero variance)
//! return [`MetricError::Undefined`] rather than a number.

mod io;
mod metrics;
mod scaling;
mod scores;

pub use io::{
    read_fits, read_scaling, read_scores, write_fits, write_scaling, write_scores, write_summary, ScoreRow,
    SCALING_HEADER, SCORES_HEADER, SUMMARY_HEADER,
};
pub use metrics::{auprc, auroc, average_ranks, mae, mean_std, pearson, spearman};
pub use scaling::{
    fit_power_law, scaling_spearman, sweep_summary, PowerLawFit, ScaleVariable, ScalingRecord, SummaryCell,
};
pub use scores::{normalized_performance, standardized_scores, Polarity, ScoreTable, SkipReason, Standardized};

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    /// The metric has no value on this input.
    #[error("undefined ({0})")]
    Undefined(&'static str),
    #[error("invalid metric input: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
