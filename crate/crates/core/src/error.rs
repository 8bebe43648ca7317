use thiserror::Error;

use crate::calibrator::Estimate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}[{index}] = {value} lies outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid probability {value} at index {index}")]
    Probability { index: usize, value: f64 },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("degenerate scores: {0}")]
    DegenerateScores(String),

    #[error("emulator fit failed: {0}")]
    Fit(String),

    #[error("optimizer failed to decrease the loss from any start (best loss {})", best.loss)]
    NonConvergence { best: Box<Estimate> },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("pilot stage failed: {0}")]
    Pilot(String),

    #[error("inference error: {0}")]
    Inference(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown model id `{0}` (expected example1, example2 or greenshields)")]
    UnknownModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
