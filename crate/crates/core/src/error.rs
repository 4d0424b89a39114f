use std::fmt;

/// Why a protocol participant refused a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    /// A signature did not verify.
    BadSignature,
    /// The merchant's h(OI) disagrees with the one sealed inside the payment envelope.
    LinkMismatch,
    /// Recomputed COM fingerprint disagrees with the one in the payment envelope.
    ComMismatch,
    /// Freshness values were already seen.
    Replay,
    /// Timestamp falls outside the freshness window.
    Stale,
    /// Envelope was addressed to someone else.
    WrongRecipient,
    /// Envelope could not be opened or parsed.
    Envelope,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::BadSignature => "bad-signature",
            RejectReason::LinkMismatch => "link-mismatch",
            RejectReason::ComMismatch => "reject-link",
            RejectReason::Replay => "reject-replay",
            RejectReason::Stale => "stale",
            RejectReason::WrongRecipient => "wrong-recipient",
            RejectReason::Envelope => "envelope",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("integrity check failed")]
    Integrity,
    #[error("invalid state: {0}")]
    State(String),
    #[error("payload too large: {size} bytes exceeds capacity of {capacity}")]
    PayloadTooLarge { size: usize, capacity: usize },
    #[error("customer {0} is not registered")]
    NotRegistered(String),
    #[error("rejected: {0}")]
    Rejected(RejectReason),
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("simulation did not terminate within {0} ticks")]
    Nontermination(u64),
    #[error("transaction aborted before commit")]
    Aborted,
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
