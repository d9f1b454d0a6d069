use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor ops, the tape, and the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two shapes that were required to agree did not.
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A single shape violated an op precondition.
    BadShape { context: &'static str, shape: Vec<usize> },
    /// Backward was requested on a value the tape never produced.
    NoGraph,
    /// Backward target is not a scalar.
    NotScalar { shape: Vec<usize> },
    /// A NaN or infinity showed up where finite values are required.
    NonFinite { context: &'static str },
    /// Anything else, with a human-readable reason.
    Invalid(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { context, lhs, rhs } => {
                write!(f, "{context}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::BadShape { context, shape } => {
                write!(f, "{context}: invalid shape {shape:?}")
            }
            Error::NoGraph => write!(f, "backward on a value with no recorded graph"),
            Error::NotScalar { shape } => {
                write!(f, "backward target must be a scalar, got shape {shape:?}")
            }
            Error::NonFinite { context } => write!(f, "{context}: non-finite value"),
            Error::Invalid(msg) => write!(f, "{msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
