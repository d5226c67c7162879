use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, geometries or settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity showed up where only finite values are allowed.
    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },

    /// Bytes that do not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    /// Input ended early or carried unexpected trailing bytes.
    #[error("length error: {what}: expected {expected} bytes at offset {offset}, found {found}")]
    Length {
        what: String,
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    /// The softmax head has equal weights, so no pooled value separates the classes.
    #[error("degenerate head: positive and negative weights are equal ({0})")]
    DegenerateHead(f64),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Attach the offending file path to an error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The underlying error with any file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::Numeric { .. })
    }

    pub fn is_input(&self) -> bool {
        matches!(
            self.root(),
            Error::Format(_) | Error::Length { .. } | Error::UnsupportedVersion { .. } | Error::Io(_)
        )
    }
}
