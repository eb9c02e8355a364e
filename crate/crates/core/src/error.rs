use std::path::PathBuf;

use thiserror::Error;

use crate::model::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid operand: {0}")]
    InvalidOperand(&'static str),

    #[error("cannot parse interval `{input}`: {reason}")]
    IntervalSyntax { input: String, reason: &'static str },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid threat model: {0}")]
    InvalidThreat(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("oracle infeasible: {count} attack representatives exceed the cap of {cap}")]
    OracleInfeasible { count: u128, cap: u128 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("line {line}: {reason}")]
    Libsvm { line: usize, reason: String },

    #[error("class {0} has fewer than two instances and cannot be stratified")]
    SingletonClass(Label),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("measure invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: at `{json_path}`: {message}")]
    Schema {
        file: String,
        json_path: String,
        message: String,
    },

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
