use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty input file: {0}")]
    EmptyFile(PathBuf),
    #[error("ragged row {line} in {path}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("malformed delimited text in {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{0}` must be numeric")]
    NotNumeric(String),
    #[error("invalid encoding spec: {0}")]
    InvalidSpec(String),
    #[error("rule for column `{column}` cannot map value `{value}` to 0 or 1")]
    RuleOutOfRange { column: String, value: String },
    #[error("degenerate shift split: {0}")]
    DegenerateSplit(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("AUC undefined: both classes must be present")]
    AucUndefined,
    #[error("DP undefined: both protected groups must be nonempty")]
    DpUndefined,
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
