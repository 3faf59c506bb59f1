use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum IsacError {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid resource assignment: {0}")]
    InvalidAssignment(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what}: problem size {size} exceeds limit {limit}")]
    Capacity { what: String, size: f64, limit: f64 },

    #[error("degenerate index distribution: {0}")]
    DegenerateDistribution(String),

    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("ill-conditioned compensation: UE {ue}, symbol {symbol}, subcarrier {subcarrier} has data modulus {modulus:e}")]
    IllConditionedCompensation {
        ue: usize,
        symbol: usize,
        subcarrier: usize,
        modulus: f64,
    },

    #[error("UEs {ue_a} and {ue_b} share subcarrier {subcarrier}; no interference-free compensator exists")]
    SubcarrierOverlap {
        ue_a: usize,
        ue_b: usize,
        subcarrier: usize,
    },

    #[error("insufficient snapshots: {available} available, {required} required")]
    InsufficientSnapshots { available: usize, required: usize },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IsacError>;
