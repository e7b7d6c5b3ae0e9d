use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors surfaced by the library and the CLI.
///
/// Per-pixel and per-voxel "signals" (behind camera, degenerate window, ...)
/// are not errors; they are carried as `Option`/enum results by the operations
/// that produce them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {what} is {found:?}, expected {expected:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("degenerate neighborhood: {0}")]
    Degenerate(&'static str),

    #[error("cost curve has {0} usable hypotheses, need at least 2")]
    CurveTooShort(usize),

    #[error("cannot train inlier mapping: {0}")]
    CannotTrain(String),

    #[error("insufficient neighbors: cloud has {available} points, need {required}")]
    InsufficientNeighbors { available: usize, required: usize },

    #[error("volume has no occupied voxels")]
    EmptyVolume,

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {}: {msg}", .path.display())]
    Format { path: PathBuf, msg: String },

    #[error("validation failed for {}: {msg}", .path.display())]
    Validation { path: PathBuf, msg: String },

    #[error("unsupported units {found:?}, expected \"mm\"")]
    Units { found: String },

    #[error("view {view}: {source}")]
    View {
        view: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI, one per error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => 2,
            Error::MissingFile(_) | Error::Io { .. } => 3,
            Error::Format { .. } | Error::Validation { .. } | Error::Units { .. } => 4,
            Error::Degenerate(_)
            | Error::CurveTooShort(_)
            | Error::InsufficientNeighbors { .. } => 5,
            Error::CannotTrain(_) => 6,
            Error::EmptyVolume | Error::Empty(_) => 7,
            Error::View { source, .. } => source.exit_code(),
        }
    }
}
