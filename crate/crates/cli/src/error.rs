use std::path::PathBuf;

use extubation_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("hash mismatch for {}: manifest records {expected}, file hashes to {actual}", path.display())]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const MISSING_ARTIFACT: i32 = 3;
    pub const HASH_MISMATCH: i32 = 4;
    pub const SCHEMA: i32 = 5;
    pub const DATA: i32 = 6;
    pub const NUMERIC: i32 = 7;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::MissingArtifact(_) => exit::MISSING_ARTIFACT,
            CliError::HashMismatch { .. } => exit::HASH_MISMATCH,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                exit::MISSING_ARTIFACT
            }
            CliError::Io { .. } => exit::OTHER,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) => exit::CONFIG,
                CoreError::Format(_) | CoreError::SchemaVersion { .. } | CoreError::Schema(_) => exit::SCHEMA,
                CoreError::NonFiniteLoss { .. } => exit::NUMERIC,
                CoreError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => exit::MISSING_ARTIFACT,
                CoreError::Io(_) => exit::OTHER,
                CoreError::Json(_) => exit::SCHEMA,
                _ => exit::DATA,
            },
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}
