use std::path::PathBuf;

use thiserror::Error;

/// A model evaluation produced a non-finite or undefined value.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("evaluation fault at theta = {theta:?}: {message}")]
pub struct EvalFault {
    pub message: String,
    pub theta: Vec<f64>,
}

impl EvalFault {
    pub fn new(message: impl Into<String>, theta: &[f64]) -> Self {
        Self {
            message: message.into(),
            theta: theta.to_vec(),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: file is empty")]
    Empty { path: PathBuf },
    #[error("{path}: no data rows after the header")]
    NoRows { path: PathBuf },
    #[error("{path}: row {row} has {found} columns, expected {expected}")]
    ColumnCount {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: row {row}, column {column} ({name}): cannot parse {value:?} as a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: usize,
        name: String,
        value: String,
    },
    #[error("{path}: row {row}, column {column} ({name}): value is not finite")]
    NonFinite {
        path: PathBuf,
        row: usize,
        column: usize,
        name: String,
    },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("{path}: malformed CSV: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("dataset must contain at least one point")]
    NoPoints,
    #[error("point {index} has x-dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Eval(#[from] EvalFault),
    #[error("expert {expert}, step {step}: {source}")]
    Step {
        expert: usize,
        step: usize,
        source: EvalFault,
    },
    #[error("degenerate mixing state: {0}")]
    Degenerate(String),
    #[error("invariant violated at step {step}: {message}")]
    Invariant { step: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for this failure category.
    ///
    /// 2 configuration, 3 data, 4 numeric fault, 5 I/O, 6 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Serde(_) => 2,
            Error::Data(_) => 3,
            Error::Eval(_) | Error::Step { .. } | Error::Degenerate(_) => 4,
            Error::Io { .. } => 5,
            Error::Invariant { .. } => 6,
        }
    }
}
