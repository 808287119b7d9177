use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A value lies outside the mathematical domain of the operation
    /// (log of a non-positive number, division by zero, ...).
    Domain {
        op: &'static str,
        detail: String,
    },
    /// `backward` was called on a tensor with more than one element.
    NotScalar {
        shape: Vec<usize>,
    },
    InvalidArgument(String),
    /// An input that must be non-empty was empty.
    Empty(&'static str),
    OutOfRange(String),
    /// A training loss became NaN or infinite.
    NonFinite {
        step: u64,
        detail: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Error::Domain { op, detail } => write!(f, "{op}: domain error: {detail}"),
            Error::NotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::OutOfRange(msg) => write!(f, "out of range: {msg}"),
            Error::NonFinite { step, detail } => {
                write!(f, "non-finite loss at step {step}: {detail}")
            }
        }
    }
}

impl core::error::Error for Error {}
