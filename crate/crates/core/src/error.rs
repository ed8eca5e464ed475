use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObilError {
    #[error("invalid cost structure: {0}")]
    InvalidCostStructure(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("network output {0} is not strictly inside (-1, 1)")]
    UnclampedOutput(f64),
    #[error("posterior {0} is saturated at 0 or 1")]
    PosteriorSaturation(f64),
    #[error("error bound undefined: eps={eps} must be below min(p, 1-p) for p={p}")]
    BoundUndefined { p: f64, eps: f64 },
    #[error("shape error: expected {expected} features, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(f64),
    #[error("infeasible resampling target: {0}")]
    InfeasibleTarget(String),
    #[error("SMOTE needs more minority samples than neighbours (have {have}, k={k})")]
    TooFewMinority { have: usize, k: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("fit failure: {0}")]
    FitFailure(String),
    #[error("BBSE confusion matrix is not identifiable (|det| = {0:e})")]
    BbseUnidentifiable(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("decode error: {0}")]
    Decode(String),
}

pub type Result<T, E = ObilError> = std::result::Result<T, E>;
