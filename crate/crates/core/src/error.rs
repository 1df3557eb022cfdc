use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MctmError>;

#[derive(Debug, Error)]
pub enum MctmError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("probability vector is not normalised (sum = {sum})")]
    NotNormalised { sum: f64 },

    #[error("corpus has zero probability under the model")]
    ImpossibleCorpus,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MctmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MctmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        MctmError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for failures caused by the numbers rather than the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            MctmError::ImpossibleCorpus | MctmError::Numerical(_) | MctmError::NotNormalised { .. }
        )
    }
}
