use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tree: node {node} has itself as parent")]
    SelfLoop { node: usize },

    #[error("invalid tree: node {node} lies on a cycle")]
    Cycle { node: usize },

    #[error("invalid tree: node {node} is unreachable from the hub")]
    Unreachable { node: usize },

    #[error("invalid tree: parent of node {node} is {parent}, outside 0..={n}")]
    ParentOutOfRange { node: usize, parent: usize, n: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration budget of {budget} exceeded in {context}")]
    BudgetExceeded { context: &'static str, budget: u64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
