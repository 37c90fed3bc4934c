use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    /// A malformed, truncated or version-mismatched artifact file.
    #[error("artifact {field}: {reason}")]
    Artifact { field: String, reason: String },

    #[error("audit failed: {0}")]
    AuditViolation(String),

    #[error(transparent)]
    Core(#[from] dp_mtv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn artifact(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Artifact {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::AuditViolation(_) => 2,
            CliError::Artifact { .. } => 3,
            CliError::Core(dp_mtv::Error::FingerprintMismatch { .. }) => 3,
            CliError::Core(_) => 1,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
