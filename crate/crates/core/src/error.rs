use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, got {got})")]
    DimMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("finite difference: non-finite objective at coordinate {coordinate}")]
    NonFiniteAtCoordinate { coordinate: usize },

    #[error("{op}: empty input")]
    Empty { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inner loop: non-finite loss at step {step}")]
    InnerLoopDiverged { step: usize },

    #[error("meta training diverged at iteration {iteration} (loss {loss:e})")]
    MetaDiverged { iteration: usize, loss: f64 },

    #[error("unknown class id {0}")]
    UnknownClass(u32),

    #[error("fisher information is identically zero (degenerate model)")]
    ZeroFisher,

    #[error("decode error at byte offset {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("unknown {kind} '{name}' (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("non-finite total loss in task {task}, step {step}: {breakdown}")]
    LossDiverged {
        task: usize,
        step: usize,
        breakdown: String,
    },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
}
