use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("numeric error in {segment}: {detail}")]
    Numeric { segment: String, detail: String },

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("invalid task: {0}")]
    Task(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn numeric(segment: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            segment: segment.into(),
            detail: detail.into(),
        }
    }
}
