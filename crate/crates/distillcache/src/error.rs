use std::io;
use std::path::{Path, PathBuf};

use distillcache_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

/// Process exit codes; fixed so pipeline stages can be scripted.
pub mod exit {
    pub const OK: u8 = 0;
    pub const GRADIENT_CHECK_FAILED: u8 = 1;
    pub const INPUT: u8 = 2;
    pub const MISSING_DATA: u8 = 3;
    pub const CORRUPT: u8 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("missing teacher dumps for {} sample(s): {}", .0.len(), .0.join(", "))]
    MissingDumps(Vec<String>),
    #[error("{}: {source}", path.display())]
    Corrupt { path: PathBuf, source: CoreError },
    #[error("{}: {reason}", path.display())]
    Mismatch { path: PathBuf, offset: u64, reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("gradient check failed: max relative error {max_rel_err:e} exceeds {tolerance:e}")]
    GradCheck { max_rel_err: f64, tolerance: f64 },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn json(path: impl AsRef<Path>, source: serde_json::Error) -> Self {
        CliError::Json { path: path.as_ref().to_path_buf(), source }
    }

    pub fn corrupt(path: impl AsRef<Path>, source: CoreError) -> Self {
        CliError::Corrupt { path: path.as_ref().to_path_buf(), source }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    /// Attaches a path to a core error, treating data problems as corruption.
    pub fn from_core_at(path: impl AsRef<Path>, source: CoreError) -> Self {
        match source {
            CoreError::Config(_) | CoreError::InvalidArgument(_) => CliError::Core(source),
            _ => CliError::corrupt(path, source),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io { .. } | CliError::Json { .. } => exit::INPUT,
            CliError::MissingDumps(_) => exit::MISSING_DATA,
            CliError::Corrupt { .. } | CliError::Mismatch { .. } => exit::CORRUPT,
            CliError::Core(e) => match e {
                CoreError::Corrupt { .. } | CoreError::Format(_) => exit::CORRUPT,
                _ => exit::INPUT,
            },
            CliError::GradCheck { .. } => exit::GRADIENT_CHECK_FAILED,
        }
    }

    /// Byte offset of the problem, when one is known.
    pub fn offset(&self) -> Option<u64> {
        match self {
            CliError::Corrupt { source: CoreError::Corrupt { offset, .. }, .. } | CliError::Core(CoreError::Corrupt { offset, .. }) => {
                Some(*offset)
            }
            CliError::Mismatch { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}
