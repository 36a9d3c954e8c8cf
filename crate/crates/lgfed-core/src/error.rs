//! Error type shared across the core.

use alloc::string::String;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Errors emitted by the core algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not line up.
    Shape {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A backward pass was handed activations from a different forward call.
    StaleCache(&'static str),
    /// Input data violates a contract (label range, missing column, ...).
    Data(String),
    /// A gradient or parameter stopped being finite; the step was refused.
    NonFinite(&'static str),
    /// An argument is outside its documented domain.
    InvalidArgument(&'static str),
    /// A dataset is too small for the requested plan.
    Capacity { needed: usize, available: usize },
    /// Aggregation received incompatible contributions.
    Protocol(&'static str),
    /// A metric is undefined on the given inputs (e.g. single-class AUC).
    UndefinedMetric(&'static str),
    /// Devices lack the protected attribute required for adversarial training.
    MissingProtected,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                context,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch in {context}: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Error::StaleCache(what) => write!(f, "stale forward cache: {what}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::Capacity { needed, available } => {
                write!(f, "dataset too small: need {needed}, have {available}")
            }
            Error::Protocol(what) => write!(f, "protocol error: {what}"),
            Error::UndefinedMetric(what) => write!(f, "undefined metric: {what}"),
            Error::MissingProtected => {
                write!(f, "device data carries no protected attribute column")
            }
        }
    }
}

impl core::error::Error for Error {}
