use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("stock level {level} outside [0, {capacity}] for storage {index}")]
    StockOutOfBounds {
        index: usize,
        level: f64,
        capacity: f64,
    },

    #[error("cut enumeration would produce {requested} cuts, above the cap of {cap}; use fewer hidden layers or neurons")]
    CutCapExceeded { requested: u128, cap: usize },

    #[error("brute-force enumeration exceeded {limit} nodes")]
    Explosion { limit: usize },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("transition LP at stage {stage} is {status} for state {state:?}")]
    InfeasibleTransition {
        stage: usize,
        state: Vec<f64>,
        status: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
