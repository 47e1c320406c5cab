use thiserror::Error;

/// Harness failures, grouped by process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Io(_) => 2,
            HarnessError::Numerical(_) => 3,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        HarnessError::Io(format!("{context}: {e}"))
    }
}

impl From<cad_core::Error> for HarnessError {
    fn from(e: cad_core::Error) -> Self {
        use cad_core::Error as E;
        match e {
            E::Io(_) => HarnessError::Io(e.to_string()),
            E::NotPositiveDefinite { .. } | E::NonFinite(_) => HarnessError::Numerical(e.to_string()),
            _ => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
