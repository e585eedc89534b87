use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    /// The data-fidelity term blew up during an FPPA run.
    #[error("divergence at iteration {iteration}: data term {value:e} exceeds 10x initial {initial:e} (step size too large?)")]
    Diverged { iteration: usize, value: f64, initial: f64 },

    /// A non-finite value appeared in the forward pass of the network.
    #[error("non-finite value at layer {layer}")]
    NonFinite { layer: usize },

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. } | Error::NonFinite { .. } | Error::TrainingAborted(_)
        )
    }
}
