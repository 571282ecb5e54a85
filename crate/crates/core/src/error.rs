use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, symmetry, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative routine did not converge or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A loss left the admissible range while training.
    #[error("divergence at step {step}: {quantity} = {value:e}")]
    Divergence {
        step: u64,
        quantity: &'static str,
        value: f64,
    },

    /// A theorem-level precondition required by a bound formula does not hold.
    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
