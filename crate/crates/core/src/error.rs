//! Crate-wide error types and process exit codes.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Top-level error for pipeline operations.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// signal acquisition problems with 3, trainer failures with 4, and anything
/// else with 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),

    #[error("signal: {0}")]
    Signal(String),

    #[error("selection: {0}")]
    Selection(String),

    #[error("refinement: {0}")]
    Refinement(String),

    #[error("report: {0}")]
    Report(String),

    #[error("trainer: {0}")]
    Trainer(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code the CLI reports for this error.
    #[must_use]
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Signal(_) => 3,
            Error::Trainer(_) => 4,
            _ => 1,
        }
    }
}

/// Errors raised by the model gateway.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    /// Connection, DNS, or timeout failure before a response arrived.
    #[error("transport: {0}")]
    Transport(String),

    /// Non-success HTTP status from the endpoint.
    #[error("endpoint returned status {code}: {body}")]
    Status { code: u16, body: String },

    /// Response arrived but did not match the expected wire shape.
    #[error("protocol: {0}")]
    Protocol(String),

    /// The backend cannot serve this request kind at all.
    #[error("capability: {0}")]
    Capability(String),

    /// All retry attempts failed; carries the attempt count and last cause.
    #[error("transport: retries exhausted after {attempts} attempts, last error: {last}")]
    Exhausted { attempts: u32, last: String },
}

impl GatewayError {
    /// Whether another attempt could plausibly succeed.
    #[must_use]
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Status { code, .. } => *code == 408 || *code == 429 || *code >= 500,
            _ => false,
        }
    }
}
