use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gradient tape error: {0}")]
    Tape(String),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("invalid batch: {0}")]
    Batch(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}; batch dumped to {dump}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        dump: PathBuf,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing run artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Png(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
