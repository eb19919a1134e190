use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward: {0}")]
    Backward(String),

    #[error("parameter `{0}` is not registered")]
    UnknownParam(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("invalid config: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("data: {0}")]
    Data(String),

    #[error("csv line {line}, column `{column}`: cannot parse {value:?}")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },

    #[error("ragged series: {0}")]
    Ragged(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
