use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Structural problem with an input blob or text file.
    #[error("format error: {0}")]
    Format(String),

    /// A value could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Input is well-formed but too small or too degenerate to process.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Dimension mismatch between two operands.
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },

    #[error("no pose for frame {0}")]
    Join(u64),

    /// Decoded data violated an invariant (e.g. a non-finite value).
    #[error("validation error: {0}")]
    Validation(String),

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

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
