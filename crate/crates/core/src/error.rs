use std::path::PathBuf;

use crate::solver::TermKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("numerical instability in {} term at step {step}, grid index {index}", term_name(.term))]
    Instability {
        term: Option<TermKind>,
        step: usize,
        index: usize,
    },

    #[error("training failed{}{}: {source}", .epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default(), .sample.map(|s| format!(", batch sample {s}")).unwrap_or_default())]
    Training {
        epoch: Option<usize>,
        sample: Option<usize>,
        source: Box<Error>,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("Hellinger target {target} is unreachable: {reason}")]
    Unreachable { target: f64, reason: String },

    #[error("term mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("checksum mismatch in blob `{blob}` at byte offset {offset}")]
    Corruption { blob: String, offset: u64 },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn term_name(term: &Option<TermKind>) -> &'static str {
    match term {
        Some(kind) => kind.name(),
        None => "state",
    }
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Validation { .. }
            | Error::Degenerate(_)
            | Error::Unreachable { .. }
            | Error::MaskMismatch(_) => 2,
            Error::Instability { .. } => 3,
            Error::Training { source, .. } => source.exit_code(),
            Error::Corruption { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Manifest { .. }
            | Error::Io { .. } => 4,
        }
    }
}
