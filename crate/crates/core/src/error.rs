use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors produced anywhere in the core pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An operation received operands whose shapes violate its contract.
    Shape {
        op: &'static str,
        detail: String,
        shapes: Vec<Vec<usize>>,
    },
    /// A loss was asked to reduce over zero items.
    EmptyBatch { op: &'static str },
    /// A value became NaN or infinite.
    NonFinite { op: &'static str },
    /// A caller broke an operation precondition.
    Contract(String),
    /// Distillation features could not be paired.
    DistillationWiring { layer: usize, detail: String },
    /// The optimizer found no gradient for a trainable parameter.
    MissingGradient { name: String },
    /// An architecture or training configuration is invalid.
    Config(String),
    /// A dataset violated a training precondition.
    Data(String),
    /// Checkpoint bytes could not be decoded.
    Checkpoint { field: &'static str, detail: String },
    /// A correlation statistic is undefined for the given input.
    UndefinedStatistic(String),
    /// An internal invariant was violated.
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>, shapes: &[&[usize]]) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        }
    }

    pub(crate) fn checkpoint(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Checkpoint {
            field,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail, shapes } => {
                write!(f, "{op}: shape error: {detail} (shapes:")?;
                for s in shapes {
                    write!(f, " {s:?}")?;
                }
                write!(f, ")")
            }
            Error::EmptyBatch { op } => write!(f, "{op}: empty batch"),
            Error::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::DistillationWiring { layer, detail } => {
                write!(f, "distillation wiring error at layer {layer}: {detail}")
            }
            Error::MissingGradient { name } => write!(f, "missing gradient for parameter `{name}`"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Data(msg) => write!(f, "dataset contract error: {msg}"),
            Error::Checkpoint { field, detail } => {
                write!(f, "checkpoint error in {field}: {detail}")
            }
            Error::UndefinedStatistic(msg) => write!(f, "undefined statistic: {msg}"),
            Error::Internal(msg) => write!(f, "internal invariant violated: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
