use alloc::string::String;

/// Errors raised by the compute core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("capacity error: sequence length {len} exceeds max_len {max_len}")]
    Capacity { len: usize, max_len: usize },
    #[error("degenerate range: all values equal {0}")]
    DegenerateRange(f64),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::Error::Dimension(alloc::format!($($arg)*)) };
}
macro_rules! param_err {
    ($($arg:tt)*) => { $crate::Error::Parameter(alloc::format!($($arg)*)) };
}
macro_rules! contract_err {
    ($($arg:tt)*) => { $crate::Error::Contract(alloc::format!($($arg)*)) };
}
pub(crate) use contract_err;
pub(crate) use dim_err;
pub(crate) use param_err;
