use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// `Usage` exits 2, `Validation` exits 3, everything else exits 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("length error in {path}: expected {expected} bytes, got {actual}")]
    Length {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("divergence at {context}: {reason}")]
    Divergence { context: String, reason: String },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("model incompatibility: {0}")]
    Compatibility(String),

    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Validation(_) | Error::Shape(_) => 3,
            _ => 1,
        }
    }
}
