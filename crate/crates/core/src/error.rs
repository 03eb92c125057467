use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum EdmError {
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("parameter `{path}` has no gradient; run backward() first")]
    MissingGrad { path: String },

    #[error("unknown parameter path `{path}`")]
    UnknownParam { path: String },

    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("{context}: center of gravity is not zero (max |mean| = {max_abs:.3e})")]
    CogViolation { context: &'static str, max_abs: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown element symbol `{0}`")]
    UnknownElement(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EdmError>;
