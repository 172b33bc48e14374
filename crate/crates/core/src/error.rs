use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("off-grid prefix: {value} is not a multiple of 2^-{h}")]
    OffGridPrefix { value: f64, h: u32 },

    #[error("prefix index {index} out of range for resolution {h}")]
    PrefixOutOfRange { index: u64, h: u32 },

    #[error("unbalanced input: bal_subg_disc needs an even number of vectors, got {0}")]
    UnbalancedInput(usize),

    #[error("walk failure: |<w, v>| = {lambda} exceeded threshold {threshold} at step {step}")]
    WalkFailure {
        lambda: f64,
        threshold: f64,
        step: usize,
    },

    #[error(
        "split failed after {attempts} attempts (seed {seed}, level {level}, set {set}): {last}"
    )]
    SplitFailed {
        seed: u64,
        level: usize,
        set: usize,
        attempts: usize,
        last: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("child is not a subset of parent")]
    NotSubset,

    #[error("exact star discrepancy unsupported above 1-d (d = {0})")]
    ExactStarUnsupported(usize),

    #[error("tree carries no discrepancy records")]
    MissingDiscRecords,

    #[error("malformed layout: {0}")]
    MalformedLayout(String),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("estimator {estimator} does not support d = {d}")]
    EstimatorDimension { estimator: String, d: usize },

    #[error("too few samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("output path exists: {0} (use --force to overwrite)")]
    OutputExists(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
