//! Error types shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Numerical failures raised by the analysis and optimization pipeline.
#[derive(Debug, Error)]
pub enum NumericalError {
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("stiffness matrix is not positive definite")]
    Indefinite,
    #[error("linear solve residual {residual:.3e} exceeds tolerance {tolerance:.1e}")]
    SolverResidual { residual: f64, tolerance: f64 },
    #[error("degenerate segment with coincident endpoints ({x}, {y})")]
    DegenerateSegment { x: f64, y: f64 },
    #[error("{what} = {value:.3e} is below the admissible floor")]
    VanishingMeasure { what: &'static str, value: f64 },
    #[error("value {value} of {what} lies outside [{lower}, {upper}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("MMA subproblem did not converge (residual {residual:.3e})")]
    Subproblem { residual: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<NumericalError>,
    },
}

/// Configuration loading and validation failures.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("malformed override `{0}` (expected key=value)")]
    Override(String),
    #[error("invalid model: {0}")]
    Model(#[from] NumericalError),
}

/// Failures while writing result files.
#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("cannot serialize {what}: {message}")]
    Serialize { what: &'static str, message: String },
}

pub type Result<T, E = NumericalError> = std::result::Result<T, E>;
