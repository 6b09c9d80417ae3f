use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the retouching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("expected an image in {expected} space, got {actual}")]
    WrongColorSpace {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("sample {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph already consumed: variable belongs to a cleared graph")]
    GraphConsumed,

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    BadVersion(u32),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("{path}: corrupt file: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a path to I/O errors.
pub trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
