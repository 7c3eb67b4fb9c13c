use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("planning failed: {0}")]
    Plan(String),

    #[error("unmapped index ({row}, {col}) of matrix {matrix}")]
    Unmapped { matrix: String, row: usize, col: usize },

    #[error("fan-in overflow at output ({row}, {col}): received {received}, required {required}")]
    FanInOverflow {
        row: usize,
        col: usize,
        received: usize,
        required: usize,
    },

    #[error("deadlock: {0}")]
    Deadlock(String),

    #[error("sequencer contract violation: {0}")]
    Sequencer(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("workload error: {0}")]
    Workload(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
