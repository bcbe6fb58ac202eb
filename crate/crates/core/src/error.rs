use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("word `{0}` is not in the word table")]
    MissingWord(String),

    #[error("relation index {index} out of range for vocabulary of size {size}")]
    UnknownRelation { index: usize, size: usize },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("corpus is empty after {stage}")]
    EmptyCorpus { stage: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite gradient in {tensor} at flat index {index}")]
    NonFiniteGradient { tensor: String, index: usize },

    #[error("training diverged at step {step} (epoch {epoch}): loss = {loss}")]
    Diverged { step: usize, epoch: usize, loss: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
