use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },

    #[error("{op}: non-integral output extent ({extent} + 2*{padding} - {kernel}) / {stride}")]
    NonIntegralExtent {
        op: &'static str,
        extent: usize,
        padding: usize,
        kernel: usize,
        stride: usize,
    },

    #[error("maxpool: window at output ({row}, {col}) lies entirely in padding")]
    WindowInPadding { row: usize, col: usize },

    #[error("batchnorm: negative variance {value} in channel {channel}")]
    NegativeVariance { channel: usize, value: f32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unsupported manifest version {0}")]
    UnsupportedVersion(u32),

    #[error("unresolved tensor {0}")]
    UnresolvedTensor(String),

    #[error("tensor {name}: unsupported dtype {dtype} (only f32)")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("tensor {name}: file holds {actual} bytes, shape needs {expected}")]
    TensorSize {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("node {node}: {reason}")]
    InvalidGraph { node: String, reason: String },

    #[error("image: bad magic {0:?}")]
    BadMagic(String),

    #[error("image: maxval {0} (only 255 is supported)")]
    BadMaxval(u32),

    #[error("image: malformed header: {0}")]
    BadHeader(String),

    #[error("truncated pixel data")]
    TruncatedPixelData,

    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: {source}")]
    Layer {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_layer(self, context: impl Into<String>) -> Self {
        Error::Layer {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
