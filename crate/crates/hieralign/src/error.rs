use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, Error>;

/// Every variant renders on one line; the CLI prints it as
/// `error[<kind>]: <message>`.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("key {key}: {msg}")]
    Config { key: String, msg: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    /// A stored hash or version disagrees with the expected one.
    #[error("{what} mismatch: expected {expected}, found {found}")]
    Mismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Core(#[from] hieralign_core::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Error {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Mismatch { .. } => "mismatch",
            Error::Core(_) => "core",
        }
    }

    /// `error[<kind>]: <message>` with any line breaks flattened.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.kind())
    }
}
