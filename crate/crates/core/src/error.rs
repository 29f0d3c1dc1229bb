use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no convergence after {iterations} iterations (best residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    /// An accepted iterate violated a Stieltjes-transform invariant, which
    /// means the solver landed on the wrong root.
    #[error("branch error: {0}")]
    Branch(String),

    #[error("edge not found: {0}")]
    EdgeNotFound(String),

    #[error("degenerate edge: {0}")]
    DegenerateEdge(String),

    #[error("evaluation point {0} lies on a pole")]
    Pole(f64),

    #[error("insufficient grid resolution: {0}")]
    Resolution(String),

    #[error("simulation failure: {0}")]
    SimulationFailure(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn invalid_shape(msg: impl Into<String>) -> Error {
    Error::InvalidShape(msg.into())
}
