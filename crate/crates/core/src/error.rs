use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied value violates a documented constraint. `key` names
    /// the offending field (config key, argument or record field).
    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is structurally fine but missing something an operation
    /// needs, e.g. a score channel.
    #[error("data error: {0}")]
    Data(String),

    #[error("{0}")]
    Unidentifiable(String),

    #[error("underdetermined fit: {observations} observations for {parameters} free parameters")]
    Underdetermined { observations: usize, parameters: usize },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code for this error: 2 for anything the user can fix by
    /// changing inputs or configuration, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation { .. }
            | Error::Config(_)
            | Error::Unidentifiable(_)
            | Error::Underdetermined { .. }
            | Error::Parse { .. } => 2,
            Error::Data(_) | Error::Io { .. } => 1,
        }
    }
}

pub(crate) fn ensure_fraction(key: &str, value: f64) -> Result<()> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::validation(key, format!("{value} is not a fraction in [0, 1]")))
    }
}
