use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid mask: no unmasked entries")]
    InvalidMask,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("corrupt data at position {position}: {reason}")]
    CorruptData { position: usize, reason: String },
    #[error("non-finite gradient for parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error("non-finite loss for instance {instance}")]
    NonFiniteLoss { instance: String },
    #[error("dataset is empty after {stage}")]
    EmptyDataset { stage: &'static str },
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(String),
    #[error("metric undefined over an empty rank list")]
    UndefinedMetric,
    #[error("invalid target index {0}")]
    InvalidTarget(u32),
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
