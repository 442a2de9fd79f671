//! Error type shared across the crate.

use thiserror::Error;

/// Convenience alias used by every fallible function in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All the ways an audit can fail.
///
/// The variants are grouped so that callers (notably the CLI) can map them
/// to coarse exit codes: problems with inputs (`Io`, `Csv`, `Json`,
/// `Schema`, `Data`, `Metrics`, `Model`) versus problems with the privacy
/// machinery or the protocol itself (`Mechanism`, `Protocol`, `Rejected`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// The schema itself is malformed (duplicate names, missing roles, ...).
    #[error("schema error: {0}")]
    Schema(String),

    /// A dataset violates its schema or an operation's preconditions.
    #[error("data error: {0}")]
    Data(String),

    /// A fairness metric is undefined on the given counts.
    #[error("metrics error: {0}")]
    Metrics(String),

    /// Training or prediction failed.
    #[error("model error: {0}")]
    Model(String),

    /// A privacy mechanism was configured or applied incorrectly.
    #[error("mechanism error: {0}")]
    Mechanism(String),

    /// A request or release document is malformed.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The platform refused an audit request (bad budget, unknown
    /// attribute, ...). Distinct from `Protocol` so servers can answer
    /// with a rejection rather than an internal error.
    #[error("request rejected: {0}")]
    Rejected(String),
}

impl Error {
    /// Exit code for command-line front ends: 2 for input/data problems,
    /// 3 for mechanism/protocol problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Schema(_)
            | Error::Data(_)
            | Error::Metrics(_)
            | Error::Model(_) => 2,
            Error::Mechanism(_) | Error::Protocol(_) | Error::Rejected(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_group_variants() {
        assert_eq!(Error::Data("x".into()).exit_code(), 2);
        assert_eq!(Error::Schema("x".into()).exit_code(), 2);
        assert_eq!(Error::Metrics("x".into()).exit_code(), 2);
        assert_eq!(Error::Mechanism("x".into()).exit_code(), 3);
        assert_eq!(Error::Rejected("x".into()).exit_code(), 3);
    }

    #[test]
    fn messages_carry_context() {
        let e = Error::Mechanism("epsilon must be positive, got -1".into());
        assert!(e.to_string().contains("epsilon must be positive"));
    }
}
