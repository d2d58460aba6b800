use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    /// An argument violates the operation's domain (invalid state, action, range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The request is well-formed but beyond what this operation can do (e.g. enumeration guard).
    #[error("capability error: {0}")]
    Capability(String),

    #[error("malformed state key {0:?}")]
    BadKey(String),

    #[error("training log sink failed: {0}")]
    Sink(#[source] Box<dyn std::error::Error + Send + Sync>),

    #[error("policy produced an invalid trajectory: {0}")]
    Policy(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Domain(msg.into()))
}
