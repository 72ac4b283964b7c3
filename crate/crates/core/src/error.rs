use thiserror::Error;

/// Errors raised across the audit toolkit.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined input: {0}")]
    Undefined(String),

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AuditError>;

pub(crate) fn invalid(msg: impl Into<String>) -> AuditError {
    AuditError::InvalidInput(msg.into())
}
