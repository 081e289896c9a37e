use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is disconnected: nodes {unreachable:?} are unreachable from node 1")]
    Disconnected { unreachable: Vec<usize> },

    #[error("edge file line {line}: {msg}")]
    EdgeFile { line: usize, msg: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no combined prox available for this instance (per-node partitions differ)")]
    NoCombinedProx,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("nested solver failed: {0}")]
    NestedSolver(String),

    #[error("time budget exhausted")]
    BudgetExhausted,

    #[error("instance error: {0}")]
    Instance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
