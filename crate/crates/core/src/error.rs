use hima_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("malformed {format} file: {msg}")]
    Format { format: &'static str, msg: String },
    #[error("numerical failure at step {step}: {msg}")]
    Numerical { step: usize, msg: String },
    #[error("weights error: {0}")]
    Weights(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
