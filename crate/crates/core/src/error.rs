use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("grid must be at least 3x3, got {height}x{width}")]
    InvalidDims { height: usize, width: usize },
    #[error("invalid grid state: {0}")]
    Invalid(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("rollout does not start from the task instance's initial state")]
    TraceMismatch,
    #[error("bad layout file: {0}")]
    Layout(String),
    #[error("task {task} has no configuration `{config}`")]
    BadConfig { task: &'static str, config: u64 },
}

/// Syntax error in a token sequence. `index` is the 0-based position of the
/// first offending token (equal to the sequence length for a premature end).
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at token {index}: {message}")]
pub struct ParseError {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("token `{token}` is not legal here (legal: {legal})")]
    Illegal { token: String, legal: String },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("could not sample a program within {0} attempts")]
    SamplingExhausted(usize),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("unknown token index {0}")]
    UnknownToken(usize),
    #[error("training diverged at epoch {epoch} ({phase}): {detail}")]
    Diverged {
        epoch: usize,
        phase: String,
        detail: String,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("missing corpus program `{0}`")]
    MissingProgram(String),
}
