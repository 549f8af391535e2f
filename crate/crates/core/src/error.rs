use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input violates a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// The parameters cannot be recovered from the supplied distributions.
    #[error("not identified: {0}")]
    Identification(String),

    #[error("complex eigenvalues (discriminant {discriminant:.3e}); use the extreme estimator")]
    ComplexEigenvalues { discriminant: f64 },

    #[error("near-degenerate eigenvalues (gap {gap:.3e})")]
    NearDegenerate { gap: f64 },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("invalid design: {0}")]
    Design(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
