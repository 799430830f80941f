use thiserror::Error;

pub type Result<T, E = CnmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CnmError {
    /// Operand shapes do not line up.
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("argument error: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite loss or gradient during optimisation.
    #[error("training error: {0}")]
    Training(String),

    #[error("format error in {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("corpus spec error: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CnmError {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        CnmError::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CnmError::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
