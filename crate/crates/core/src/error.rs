use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, KwsError>;

#[derive(Debug, thiserror::Error)]
pub enum KwsError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad input supplied by the caller (arguments, configs, manifests).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A file that does not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl KwsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KwsError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        KwsError::Invalid(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        KwsError::Format(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        KwsError::Shape(msg.into())
    }

    /// True for errors caused by user-supplied input rather than the runtime.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            KwsError::Invalid(_) | KwsError::Format(_) | KwsError::Unsupported(_) | KwsError::Shape(_)
        )
    }
}
