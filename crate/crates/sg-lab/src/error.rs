//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants are
//! deliberately coarse: they distinguish *what went wrong* (bad configuration,
//! degenerate numerics, missing data) rather than *where*, since the message
//! carries the local detail.

/// Errors produced by the library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A matrix argument had non-finite entries or an inconsistent shape.
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    /// An eigenvalue-based operation required a (numerically) nonsingular
    /// matrix and did not get one.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// Two arguments disagreed on dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionError(String),

    /// A specification or configuration value was out of range.
    #[error("configuration error: {0}")]
    ConfigError(String),

    /// Runtime data (measurements, inputs) was non-finite or malformed.
    #[error("data error: {0}")]
    DataError(String),

    /// A diagnostic was asked for before enough samples were available.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A rank-one update had energy exceeding its normalizer, breaking the
    /// contraction property of the tracked products.
    #[error("contraction violation: {0}")]
    ContractionViolation(String),

    /// A transition-product anchor was referenced before being registered.
    #[error("unknown anchor: {0}")]
    AnchorError(String),

    /// All block weights were zero, so the bound denominator is undefined.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// A scalar argument was outside the mathematical domain of the formula.
    #[error("domain error: {0}")]
    DomainError(String),

    /// The recorded horizon is too short to place even the first block
    /// boundaries of a schedule.
    #[error("insufficient horizon: {0}")]
    InsufficientHorizon(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
