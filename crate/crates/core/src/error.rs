use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("manifest has no grouping")]
    MissingGrouping,
    #[error("gloss `{0}` has no samples")]
    EmptyGloss(String),
    #[error("infeasible configuration: {0}")]
    Infeasible(String),
    #[error("samples without train/test assignment: {0}")]
    Unassigned(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate verdict from expert `{expert}` on pair ({a}, {b})")]
    DuplicateVote {
        expert: String,
        a: String,
        b: String,
    },
    #[error("unknown expert `{0}`")]
    UnknownExpert(String),
    #[error("no review task for pair ({0}, {1})")]
    UnknownTask(String, String),
    #[error("review task ({0}, {1}) is closed")]
    TaskClosed(String, String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown language tag `{0}`")]
    UnknownLanguage(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
