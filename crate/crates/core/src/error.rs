use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An op received operands whose shapes it cannot combine.
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    /// `backward` was called on a value with more than one element.
    NonScalarRoot { shape: Vec<usize> },
    /// Tensor data length disagrees with the product of its shape.
    BadTensor { shape: Vec<usize>, len: usize },
    /// NaN or infinity showed up where finite values are required.
    NonFinite { context: &'static str },
    InvalidArgument(String),
    /// Covariance failed the PSD check; carries the offending eigenvalue.
    NotPsd { eigenvalue: f64 },
    /// Probability rows do not sum to one or contain negative entries.
    NotProbability { row: usize, sum: f64 },
    /// The toy classifier never reached the required accuracy.
    ClassifierUnderfit { accuracy: f64, required: f64 },
    HeadOutOfRange { index: usize, heads: usize },
    EmptyDataset,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, shapes } => {
                write!(f, "shape mismatch in {op}: operand shapes {shapes:?}")
            }
            Error::NonScalarRoot { shape } => {
                write!(f, "backward requires a scalar root, got shape {shape:?}")
            }
            Error::BadTensor { shape, len } => {
                write!(f, "tensor of shape {shape:?} cannot hold {len} elements")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NotPsd { eigenvalue } => write!(
                f,
                "covariance is not positive semi-definite (eigenvalue {eigenvalue:e})"
            ),
            Error::NotProbability { row, sum } => write!(
                f,
                "row {row} is not a probability vector (sum {sum}, or negative entry)"
            ),
            Error::ClassifierUnderfit { accuracy, required } => write!(
                f,
                "toy classifier reached {:.2}% train accuracy, {:.2}% required; \
                 increase the epoch budget or hidden width",
                accuracy * 100.0,
                required * 100.0
            ),
            Error::HeadOutOfRange { index, heads } => {
                write!(f, "head index {index} out of range (model has {heads} heads)")
            }
            Error::EmptyDataset => write!(f, "dataset is empty"),
        }
    }
}

impl core::error::Error for Error {}
