use thiserror::Error;

/// Errors raised by the encoder, decoders, channel model and calculators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A balanced partition would need sets larger than the RF chain budget.
    #[error("C1 infeasible: ceil({n}/{m}) = {set_size} exceeds {rf_chains} RF chains")]
    C1Infeasible {
        n: usize,
        m: usize,
        set_size: usize,
        rf_chains: usize,
    },

    #[error("C1 violation: row {row} has {nonzeros} nonzeros, limit is {limit}")]
    C1Violation {
        row: usize,
        nonzeros: usize,
        limit: usize,
    },

    #[error("path set is empty")]
    EmptyPathSet,

    #[error("angle {theta} rad does not fall on the DFT grid")]
    OffGridAngle { theta: f64 },

    #[error("two on-grid paths share grid index {index}")]
    DuplicateGridIndex { index: usize },

    #[error("channel has zero energy")]
    ZeroChannel,

    #[error("reference magnitude vector is all zero")]
    ZeroTruth,

    #[error("need M >= K, got M = {m}, K = {k}")]
    MLessThanK { m: usize, k: usize },

    #[error("target probability is unreachable with lambda = {lambda}")]
    InfeasibleTarget { lambda: f64 },

    #[error("enumeration oracle limited to N <= {limit}, got N = {n}")]
    OracleTooLarge { n: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
