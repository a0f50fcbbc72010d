use thiserror::Error;

/// Errors surfaced by the laboratory.
#[derive(Error, Debug)]
pub enum SdError {
    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical divergence (NaN/Inf) at step {step}")]
    NumericalDivergence { step: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SdError>;

impl SdError {
    /// Process exit code for the CLI: 2 = config error, 3 = divergence, 1 = other.
    pub fn exit_code(&self) -> i32 {
        match self {
            SdError::Config(_) | SdError::InvalidArgument(_) => 2,
            SdError::NumericalDivergence { .. } => 3,
            _ => 1,
        }
    }
}
