use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value at parameter index {index}")]
    Numerical { index: usize },

    #[error("leapfrog diverged at step {step}")]
    Divergence { step: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("metric {0} is not supported by k-means selection")]
    UnsupportedMetric(crate::metrics::MetricKind),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("archive does not match dataset: {0}")]
    Archive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
