use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("numerical fault in {op}: {detail}")]
    NumericalFault { op: String, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("learning-rate screening failed: {0}")]
    ScreeningFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn fault(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericalFault {
            op: op.into(),
            detail: detail.into(),
        }
    }

    /// True for errors raised by non-finite values or degenerate numerics.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalFault { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
