use std::fmt;

/// Errors produced while loading inputs or running pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}: parse error at byte {offset}: {reason}")]
    Parse {
        file: String,
        offset: u64,
        reason: String,
    },

    #[error("{} invariant violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invariant(Vec<String>),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible synthetic scene: {0}")]
    Infeasible(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification of an [`Error`], used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Invariant,
    Internal,
}

impl Error {
    pub fn parse(file: impl fmt::Display, offset: u64, reason: impl Into<String>) -> Self {
        Error::Parse {
            file: file.to_string(),
            offset,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(vec![msg.into()])
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parse { .. } | Error::Io { .. } | Error::Config(_) | Error::Infeasible(_) => {
                ErrorKind::Input
            }
            Error::Invariant(_) | Error::DimensionMismatch(_) => ErrorKind::Invariant,
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
