use thiserror::Error;

/// Errors raised by the protocol core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("weight {value} at index {index} exceeds the encodable magnitude {w_max}")]
    MagnitudeExceeded { index: usize, value: f64, w_max: f64 },
    #[error("non-finite weight at index {0}")]
    NonFiniteWeight(usize),
    #[error("share count must be at least 2, got {0}")]
    InvalidShareCount(usize),
    #[error("incomplete share set: expected {expected} distinct indices, got {present}")]
    IncompleteShareSet { expected: usize, present: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("share count {shares} does not match a group of {members} peers")]
    ShareCountMismatch { shares: usize, members: usize },
    #[error("roster is empty")]
    EmptyRoster,
    #[error("client {0} contributed more than once")]
    DuplicateContributor(u32),
    #[error("no contributions in round")]
    EmptyRound,
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("model has not completed a training round")]
    UntrainedModel,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training loss diverged")]
    DivergedLoss,
    #[error("weight vector of length {found} does not match layout of length {expected}")]
    LayoutMismatch { expected: usize, found: usize },
    #[error("need at least {needed} records, got {found}")]
    TooFewRecords { needed: usize, found: usize },
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadMessageType(u8),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("message truncated")]
    Truncated,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
