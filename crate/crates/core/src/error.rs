use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("negative line integral {value} at sample {index}")]
    NegativeLineIntegral { index: usize, value: f64 },
    #[error("empty field-of-view mask")]
    EmptyMask,
    #[error("backward called without a recorded train-mode forward pass")]
    NoRecordedForward,
    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
}

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
