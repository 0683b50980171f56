use std::io;

/// Errors raised across the simulation, training and evaluation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input shape error: {0}")]
    InputShape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("window for symbol {index} out of range (need {past} before and {future} after, block has {symbols} symbols)")]
    WindowOutOfRange {
        index: usize,
        past: usize,
        future: usize,
        symbols: usize,
    },
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    TrainingDiverged { epoch: usize, what: &'static str },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
