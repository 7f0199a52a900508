use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("numerical divergence in round {round}: {detail}")]
    Divergence { round: usize, detail: String },

    #[error("unsupported dynamics: {0}")]
    UnsupportedDynamics(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SimError::InvalidInput(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attaches a round index to a divergence raised below the round level.
    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            SimError::Divergence { detail, .. } => SimError::Divergence { round, detail },
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, SimError::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
