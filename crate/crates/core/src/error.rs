use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced anywhere in the toolkit.
///
/// Each variant maps onto one of the CLI exit codes through [`Error::exit_code`]:
/// configuration problems exit with 2, data problems with 3 and numeric faults with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    Shape {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("{layer}: backward called without a matching forward cache")]
    MissingCache { layer: String },

    #[error("non-finite value produced by {layer}")]
    NonFinite { layer: String },

    #[error("not a DICOM file: {0}")]
    DicomFormat(String),

    #[error("unsupported DICOM feature: {0}")]
    DicomUnsupported(String),

    #[error("truncated DICOM data: {0}")]
    DicomTruncated(String),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing upstream artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(layer: impl Into<String>, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::Shape {
            layer: layer.into(),
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }

    /// Stable machine-readable error code.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidTensor(_) => "invalid_tensor",
            Error::MissingCache { .. } => "missing_cache",
            Error::NonFinite { .. } => "non_finite",
            Error::DicomFormat(_) => "dicom_format",
            Error::DicomUnsupported(_) => "dicom_unsupported",
            Error::DicomTruncated(_) => "dicom_truncated",
            Error::Image(_) => "image",
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "invalid_input",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput(_) => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        }
    }
}
