use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("drivable space is empty")]
    EmptyDrivableSpace,
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid sample {value} (must be finite and > 0)")]
    InvalidSample { value: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("unknown class {class_id} for camera {camera:?}")]
    UnknownClass { camera: String, class_id: u32 },
    #[error("no accepted proposal after {attempts} attempts")]
    MaxAttemptsExceeded { attempts: u32 },
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("model schema version mismatch: {0}")]
    Version(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, configuration)
    /// rather than by an internal failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema(_)
                | Error::Format(_)
                | Error::Version(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::InsufficientData(_)
                | Error::DimensionMismatch(_)
                | Error::InvalidGrid(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
