use thiserror::Error;

/// Errors produced by the unmixing library.
#[derive(Debug, Error)]
pub enum HutampError {
    #[error("input error: {0}")]
    Input(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("initialization failed at {step}: {reason}")]
    Init { step: &'static str, reason: String },
    #[error("endmember extraction failed: {0}")]
    Extraction(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("turbo iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<HutampError>,
    },
    #[error("model order selection failed: {0}")]
    ModelOrder(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HutampError>;
