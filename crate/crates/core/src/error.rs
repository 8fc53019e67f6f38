use std::path::PathBuf;

use thiserror::Error;

use crate::data::{EndpointKind, Group};
use crate::global_u::KernelKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("schema mismatch: column `{0}` is not in the header")]
    SchemaMismatch(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),

    #[error("{0} group has no subjects")]
    EmptyGroup(Group),

    #[error("missing column or endpoint `{0}`")]
    MissingColumn(String),

    #[error("invalid contrast: none of the arms `{0}` are present in the data")]
    InvalidContrast(String),

    #[error("invalid endpoint declaration: {0}")]
    InvalidEndpoint(String),

    #[error("subject `{subject}` has no usable outcome for endpoint `{endpoint}`")]
    HierarchyMismatch { subject: String, endpoint: String },

    #[error("no subjects remain after complete-case exclusion")]
    EmptyAfterExclusion,

    #[error("kernel {kernel:?} does not apply to {kind:?} endpoint `{endpoint}`")]
    KernelKindMismatch {
        endpoint: String,
        kernel: KernelKind,
        kind: EndpointKind,
    },

    #[error("invalid kernel weights: {0}")]
    InvalidWeights(String),

    #[error("exact enumeration needs {needed} label assignments, cap is {cap}")]
    ExactTooLarge { needed: u128, cap: u64 },

    #[error("invalid correlation matrix: {0}")]
    InvalidCorrelation(String),

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
