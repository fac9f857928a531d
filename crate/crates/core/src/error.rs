use std::fmt;

use thiserror::Error;

/// Dimension list used in error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl From<&[usize]> for Dims {
    fn from(d: &[usize]) -> Self {
        Dims(d.to_vec())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0}: extents must be >= 1 and rank 1..=4")]
    InvalidShape(Dims),

    #[error("data length {len} does not match shape {shape}")]
    DataLength { len: usize, shape: Dims },

    #[error("non-finite value {value} at element {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: Dims,
        actual: Dims,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("architecture parse error at line {line}, column {column}: {message}")]
    ArchitectureParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("architecture invalid at layer `{layer}`: {message}")]
    Architecture { layer: String, message: String },

    #[error("weight archive: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("weight archive: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("weight archive: truncated at byte {offset} (needed {needed} more bytes)")]
    Truncated { offset: usize, needed: usize },

    #[error("weight archive: non-finite value in `{entry}` at byte {offset}")]
    NonFiniteWeight { entry: String, offset: usize },

    #[error("weight archive: {message} at byte {offset}")]
    MalformedArchive { offset: usize, message: String },

    #[error("missing weight entry `{entry}` for layer `{layer}`")]
    MissingEntry { layer: String, entry: String },

    #[error("weight `{entry}` of layer `{layer}` has shape {actual}, expected {expected}")]
    WeightShape {
        layer: String,
        entry: String,
        expected: Dims,
        actual: Dims,
    },

    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("trace does not match architecture: {0}")]
    TraceMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_mismatch(op: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.into(),
        actual: actual.into(),
    }
}
