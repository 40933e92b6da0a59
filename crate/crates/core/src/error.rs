use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("exact tail requested for a custom sequence without a closed tail model")]
    InexactTail,

    #[error("operation `{operation}` is not supported for {family} models")]
    Unsupported {
        operation: &'static str,
        family: &'static str,
    },

    #[error("past configuration too short: {required} coordinates required, {supplied} supplied")]
    InsufficientPast { required: usize, supplied: usize },

    #[error("past coordinates do not match the innovation space: {0}")]
    PastMismatch(String),

    #[error("resource guard: {0}")]
    Budget(String),

    #[error("refused: Σ a_k does not converge (classification {0}); no limiting martingale or reference law")]
    DivergentReference(String),

    #[error("refused: limiting variance is zero (coboundary); no non-degenerate reference law")]
    DegenerateVariance,

    #[error("internal consistency violated: {0}")]
    Consistency(String),
}

impl LabError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for refusals: computations that are well-posed as requests but
    /// have no meaningful answer for the given model.
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            LabError::DivergentReference(_) | LabError::DegenerateVariance
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
