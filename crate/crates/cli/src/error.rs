use stationary_lab::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),
    #[error("assertion failed: {0}")]
    Assertion(String),
    /// A well-formed request without a meaningful answer.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const ASSERTION: u8 = 3;
    pub const REFUSED: u8 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Assertion(_) => exit::ASSERTION,
            CliError::Refused(_) => exit::REFUSED,
            CliError::Lab(e) => match e {
                LabError::InvalidParameter { .. }
                | LabError::InvalidModel(_)
                | LabError::PastMismatch(_)
                | LabError::InsufficientPast { .. } => exit::CONFIG,
                LabError::Unsupported { .. } | LabError::Budget(_) | LabError::InexactTail => exit::REFUSED,
                e if e.is_refusal() => exit::REFUSED,
                _ => exit::FAILURE,
            },
            _ => exit::FAILURE,
        }
    }
}
