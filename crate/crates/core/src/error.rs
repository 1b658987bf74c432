use std::path::PathBuf;

use crate::month::MonthKey;

/// Errors produced anywhere in the pricing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: String,
        line: u64,
        field: String,
        message: String,
    },

    #[error("{file}: unexpected header: {message}")]
    Header { file: String, message: String },

    #[error("invalid month `{0}` (expected YYYY-MM)")]
    InvalidMonth(String),

    #[error("invalid amount `{0}` (expected dollars with at most two fraction digits)")]
    InvalidAmount(String),

    #[error("month {0} has zero requests; price per request is undefined")]
    DegenerateMonth(MonthKey),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("optimizer did not converge after {restarts} restarts (best objective {best_objective}, parameters {best_params:?})")]
    NonConvergence {
        restarts: usize,
        best_objective: f64,
        best_params: Vec<f64>,
    },

    #[error("all {0} candidate models failed to fit")]
    AllCandidatesFailed(usize),

    #[error("value {x} outside spline domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("month {0} is not covered by the data")]
    MonthNotCovered(MonthKey),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
