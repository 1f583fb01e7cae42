use coherent_usd::UsdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver failure: {message}")]
    Solver { message: String, context: serde_json::Value },
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver { .. } => 3,
            RunError::Io(_) => 1,
        }
    }

    /// Attaches what was being computed to a solver failure.
    pub fn context(self, what: serde_json::Value) -> Self {
        match self {
            RunError::Solver { message, .. } => RunError::Solver { message, context: what },
            other => other,
        }
    }
}

impl From<UsdError> for RunError {
    fn from(e: UsdError) -> Self {
        match e {
            UsdError::SolverFailure(_) => RunError::Solver { message: e.to_string(), context: serde_json::Value::Null },
            other => RunError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}
