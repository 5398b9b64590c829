//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/view shape disagreement between operands.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A time, scale, or other scalar argument outside its valid domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Step-ordering violation in a solver (t_next must decrease).
    #[error("step ordering error: {0}")]
    Ordering(String),

    /// Lookup of a prototype, preset, or view that does not exist.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Structurally invalid input (missing channels, empty view list, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// Non-finite values where finite math is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Optimization aborted (NaN gradient or similar diagnostic).
    #[error("fit aborted: {0}")]
    FitAborted(String),

    /// Malformed serialized data (world files, checkpoints).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
