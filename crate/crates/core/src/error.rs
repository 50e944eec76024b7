use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// Infinite energies are values, not errors: only malformed inputs and
/// constructive failures end up here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("laminate construction failed: {0}")]
    ConstructionFailure(String),

    #[error("infeasible mesh: {0}")]
    InfeasibleMesh(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("surrogate table does not cover {} queried value(s): {queries:?}", queries.len())]
    Coverage { queries: Vec<f64> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
