use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the detector library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("box is empty after clipping")]
    EmptyAfterClip,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: class id {class_id} outside 1..=6")]
    Schema {
        path: PathBuf,
        line: usize,
        class_id: i64,
    },

    #[error("dataset integrity: {message} (ids: {ids:?})")]
    DatasetIntegrity { message: String, ids: Vec<String> },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; batch ids: {batch_ids:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch_ids: Vec<String>,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
