use landau_core::Error;

/// Failures of a run, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(#[from] Error),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Acceptance(_) => 2,
            // Bad inputs that slipped past validation are configuration errors.
            Self::Numeric(Error::Precondition(_) | Error::Unsupported(_) | Error::Mismatch(_)) => 4,
            Self::Numeric(_) => 3,
            Self::Config(_) => 4,
            Self::Io { .. } => 1,
        }
    }
}
