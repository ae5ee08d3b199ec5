//! Crate-wide error type.
//!
//! Variants are grouped by how callers react to them: configuration problems,
//! shape/domain mismatches between arrays, implant-placement failures, and
//! missing inputs map onto distinct process exit codes in the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (non-positive distance, bad angle list,
    /// out-of-range parameter, unparsable config file, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Arrays that must agree in shape or domain do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Implant placement rejected (outside the field of view without the
    /// exomass flag, or invisible to every ray).
    #[error("implant placement: {0}")]
    ImplantPlacement(String),

    /// A required input file or directory does not exist.
    #[error("missing input: {0}")]
    MissingInput(String),

    /// Numerical precondition violated at runtime (degenerate interpolation
    /// set, empty mask selection, ...).
    #[error("numerical precondition: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error onto.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::ImplantPlacement(_) => 3,
            Error::ShapeMismatch(_) => 4,
            Error::MissingInput(_) => 5,
            Error::Numerical(_) | Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
