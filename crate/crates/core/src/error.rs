use std::path::PathBuf;

/// Crate-wide error type. The discriminants map onto process exit codes:
/// validation/config problems exit 2, numeric failures exit 3, I/O exits 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on user-supplied data or configuration failed.
    #[error("validation: {0}")]
    Validation(String),

    /// A structured input file could not be parsed.
    #[error("parse error in {path}{}: {msg}", row.map(|r| format!(" (row {r})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        row: Option<usize>,
        msg: String,
    },

    /// A numeric routine failed to produce a usable result.
    #[error("numeric: {0}")]
    Numeric(String),

    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            row,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 numeric, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parse { .. } => 2,
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
