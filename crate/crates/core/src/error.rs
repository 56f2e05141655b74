use thiserror::Error;

#[derive(Debug, Error)]
pub enum CandiError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("quadrature did not converge: last change {change:.3e} exceeds tolerance {tolerance:.1e}")]
    Quadrature { change: f64, tolerance: f64 },

    #[error("impossible evidence: clean positions contradict every support sequence")]
    ImpossibleEvidence,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CandiError {
    /// Short machine-readable tag, used in the CLI's JSON error records.
    pub fn kind(&self) -> &'static str {
        match self {
            CandiError::Domain(_) => "domain",
            CandiError::Degenerate(_) => "degenerate",
            CandiError::Quadrature { .. } => "quadrature",
            CandiError::ImpossibleEvidence => "impossible_evidence",
            CandiError::Shape(_) => "shape",
            CandiError::Numeric(_) => "numeric",
            CandiError::Divergence { .. } => "divergence",
            CandiError::Config(_) => "config",
            CandiError::Parse(_) => "parse",
            CandiError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CandiError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(CandiError::Domain(msg.into()))
}
