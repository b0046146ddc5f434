use thiserror::Error;

/// Errors produced by the segmentation objectives, metrics and re-ranking code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A quantity the formula divides by vanished (e.g. zero expected
    /// intersection for a class that has ground-truth mass).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("ranker training is degenerate: {0}")]
    TrainingDegenerate(String),

    /// Training produced a non-finite loss. `history` holds every entry
    /// logged up to and including the failing iteration.
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence {
        iteration: usize,
        loss: f64,
        history: Vec<crate::trainer::HistoryEntry>,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
