use std::io;
use std::path::{Path, PathBuf};

/// Failures of the command-line layer. Each maps to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed configuration, arguments or file contents.
    #[error("{0}")]
    Parse(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] tilewarp_core::Error),
    #[error("gradient check failed: max relative error {max_rel_error:e} at coordinate {worst_coordinate}")]
    GradCheckFailed { max_rel_error: f64, worst_coordinate: usize },
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, what: impl std::fmt::Display) -> Self {
        Error::Parse(format!("{}: {what}", path.display()))
    }

    /// 1 parse, 2 I/O, 3 invalid scene or shapes, 4 non-finite loss, 5 gradient check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) => 1,
            Error::Io { .. } => 2,
            Error::Core(tilewarp_core::Error::NonFinite(_)) => 4,
            Error::Core(_) => 3,
            Error::GradCheckFailed { .. } => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
