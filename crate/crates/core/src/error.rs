//! One error type for the whole pipeline, with a stable mapping to process
//! exit codes: 1 usage, 2 data validation, 3 training divergence.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input record; carries the 1-based line number.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    /// Input violated a documented invariant (duplicate id, bad label, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// Lookup of content that is not stored (unknown title, sentence index).
    #[error("not found: {0}")]
    NotFound(String),

    /// A pipeline stage needs an artifact that another command produces.
    #[error("missing artifact {artifact}; run `factforge {command}` first")]
    MissingArtifact { artifact: String, command: String },

    /// Bad flags/config usage that clap cannot catch.
    #[error("usage: {0}")]
    Usage(String),

    /// Training loss went NaN/inf.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Checkpoint/index file has the wrong magic or an unsupported version.
    #[error("artifact format: {0}")]
    Format(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code contract: 0 success, 1 usage, 2 data validation, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::MissingArtifact { .. } => 1,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::NotFound(_)
            | Error::Format(_)
            | Error::Io(_) => 2,
            Error::Diverged(_) => 3,
        }
    }
}
