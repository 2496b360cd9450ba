use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("derived {name} = {value} must be at least 1")]
    DerivedCount { name: &'static str, value: i64 },

    #[error("value is not finite: {0}")]
    NonFinite(&'static str),

    #[error("mask resolution {size} is not divisible by factor {factor}")]
    NonDivisibleFactor { size: usize, factor: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("layer `{layer}`: shape chain broken ({detail})")]
    ShapeChain { layer: String, detail: String },

    #[error("layer `{layer}`: blob `{blob}` holds {actual} floats, kernel needs {expected}")]
    BlobSize {
        layer: String,
        blob: String,
        expected: usize,
        actual: usize,
    },

    #[error("weight checksum mismatch: manifest says {expected}, blobs hash to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("mask has no support (weight sum is zero)")]
    EmptyMask,

    #[error("image {width}x{height} too small for {levels} levels; minimum side is {min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        levels: usize,
        min: usize,
    },

    #[error("distortion profile has no entry for ring {ring}")]
    MissingProfileEntry { ring: usize },

    #[error("every loss on the α grid is NaN")]
    AllNan,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("{failures} of {total} bootstrap refits failed (limit is 5%)")]
    BootstrapFailures { failures: usize, total: usize },

    #[error("image {image}, scale {scale}{}: {source}", ring.map(|r| format!(", ring {r}")).unwrap_or_default())]
    Annotated {
        image: String,
        scale: f64,
        ring: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Short machine-readable tag for this error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::DerivedCount { .. } => "derived_count",
            Error::NonFinite(_) => "non_finite",
            Error::NonDivisibleFactor { .. } => "non_divisible_factor",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::ShapeChain { .. } => "shape_chain",
            Error::BlobSize { .. } => "blob_size",
            Error::Checksum { .. } => "checksum",
            Error::EmptyMask => "empty_mask",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::MissingProfileEntry { .. } => "missing_profile_entry",
            Error::AllNan => "all_nan",
            Error::Degenerate(_) => "degenerate",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NonConvergence(_) => "non_convergence",
            Error::BootstrapFailures { .. } => "bootstrap_failures",
            Error::Annotated { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }
}
