//! Crate error type. Variants are grouped so a caller can distinguish
//! configuration mistakes from numerical failures and monitor aborts.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, mask, patch layout, parameter set, or scenario input.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Unknown key in a parameter or config file (typo guard).
    #[error("unknown key `{key}` in {context}")]
    UnknownKey { key: String, context: String },

    /// Required key missing from a parameter or config file.
    #[error("missing key `{key}` in {context}")]
    MissingKey { key: String, context: String },

    /// Malformed line or value in a text input.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    /// Iterative solver (CG or eigenvalue iteration) failed to converge.
    #[error("solver did not converge: {0}")]
    SolverDidNotConverge(String),

    /// A runtime monitor detected an invariant breach and the run was
    /// configured to abort on breaches.
    #[error("monitor abort: {0}")]
    MonitorAbort(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownKey { .. }
                | Error::MissingKey { .. }
                | Error::Parse { .. }
        )
    }
}
