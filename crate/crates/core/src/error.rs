use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("dates are not consecutive at line {line}: {prev} is followed by {next}")]
    NonConsecutiveDates {
        line: usize,
        prev: NaiveDate,
        next: NaiveDate,
    },

    #[error("negative {column} value {value} at line {line}")]
    NegativeForcing {
        line: usize,
        column: &'static str,
        value: f64,
    },

    #[error("the first water year of the series is incomplete")]
    IncompleteFirstYear,

    #[error("splitting needs at least {needed} complete water years, found {found}")]
    TooFewYears { needed: usize, found: usize },

    #[error("observed streamflow is missing at timestep {index}")]
    MissingObservation { index: usize },

    #[error("gate {gate} expects {expected} raw parameters, got {got}")]
    ArityMismatch {
        gate: String,
        expected: usize,
        got: usize,
    },

    #[error("gate {gate} needs context signal `{signal}`")]
    MissingContext { gate: String, signal: &'static str },

    #[error("gate sum {sum} exceeds one")]
    GateSumViolation { sum: f64 },

    #[error("non-finite state in node {node} at timestep {step}")]
    NonFiniteState { step: usize, node: String },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite gradient component {index}")]
    NonFiniteGradient { index: usize },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("incompatible lineage: {0}")]
    IncompatibleLineage(String),

    #[error("parameter vector has length {got}, graph needs {expected}")]
    ParamLength { expected: usize, got: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("degenerate observed series: {0}")]
    DegenerateObserved(String),

    #[error("every training run failed; last error: {0}")]
    AllRunsFailed(String),

    #[error("missing lineage run {0}")]
    MissingLineage(PathBuf),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
