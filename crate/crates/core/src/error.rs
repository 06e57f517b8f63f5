use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("only 3D volumes are supported, header declares dim[0] = {0}")]
    Dimensionality(i16),
    #[error("index {index} out of range for axis of length {len}")]
    Bounds { index: usize, len: usize },
    #[error("interpolation mode error: {0}")]
    Mode(String),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid phantom specification: {0}")]
    Specification(String),
    #[error("numeric input error: {0}")]
    NumericInput(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("measurement error: {0}")]
    Measurement(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("outlet is unreachable from inlet")]
    Unreachable,
    #[error("path error: {0}")]
    Path(String),
    #[error("cutting plane does not intersect the mesh")]
    EmptySection,
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("empty set: {0}")]
    EmptySet(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
