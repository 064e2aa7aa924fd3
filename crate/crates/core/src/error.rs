use thiserror::Error;

/// Errors raised across the pseudo-label pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: String, actual: String },

    #[error("empty input list")]
    EmptyList,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mask has no foreground pixel")]
    EmptyMask,

    #[error("bounding box covers the whole crop window; no background patch exists")]
    EmptyBackground,

    #[error("pixel ({x}, {y}) lies outside the crop window")]
    OutOfWindow { x: i32, y: i32 },

    #[error("seed set is empty")]
    EmptySeedSet,

    #[error("invalid thresholds: tau_bg ({tau_bg}) must be below tau_fg ({tau_fg})")]
    InvalidThresholds { tau_fg: f64, tau_bg: f64 },

    #[error("node {0} is claimed both foreground and background")]
    Overlap(usize),

    #[error("mask of size {width}x{height} is not divisible into {cells}x{cells} cells")]
    NotDivisible { width: usize, height: usize, cells: usize },

    #[error("Sinkhorn did not converge in {iterations} iterations (max deviation {deviation:e})")]
    NoConvergence { iterations: usize, deviation: f64 },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("could not place {requested} objects after {attempts} attempts")]
    PlacementFailure { requested: usize, attempts: usize },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("bad dimensions: {0}")]
    BadDimensions(String),

    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("value {value} at index {index} is outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn size_mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::SizeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::SingularSystem
                | Error::NonFinite(_)
                | Error::DivisionByZero(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
