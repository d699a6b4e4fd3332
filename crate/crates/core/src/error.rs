use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {field}: {message}")]
    Format {
        path: PathBuf,
        field: &'static str,
        message: String,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("scenario {scenario} frame {frame}: missing {role} file {path}")]
    MissingFrameFile {
        scenario: String,
        frame: usize,
        role: &'static str,
        path: PathBuf,
    },

    /// A precondition of an operation was violated by its arguments.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid run configuration, detected before any work starts.
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        field: &'static str,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            field,
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    /// True for errors caused by bad arguments rather than by the filesystem.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Contract(_) | Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
