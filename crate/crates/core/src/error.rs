use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("duplicate (firm, year) keys: {}", format_keys(.0))]
    Duplicate(Vec<(String, i32)>),
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("did not converge: {0}")]
    Convergence(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },
    #[error("no treated unit found a match within the caliper")]
    NoMatch,
    #[error("no within-variation in `{0}` after fixed-effect transformation")]
    NoVariation(String),
    #[error("lag {max_lag} is not smaller than the panel span of {span} years")]
    Span { max_lag: usize, span: usize },
    #[error("render error: {0}")]
    Render(String),
    #[error("invalid configuration: {0}")]
    Config(String),
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
    #[error("model encoding: {0}")]
    Encoding(String),
}

fn format_keys(keys: &[(String, i32)]) -> String {
    keys.iter()
        .map(|(f, y)| format!("({f}, {y})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
