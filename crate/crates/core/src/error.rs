use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no phase reference: every fast-time bin has zero amplitude")]
    NoReference,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged: loss is {loss} at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
