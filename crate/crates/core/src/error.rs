//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument left the domain of a special function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A hyperpoint violated its prior box, the ordering constraint, or the
    /// open smoothness interval.
    #[error("invalid hyperpoint: {0}")]
    InvalidPoint(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Cholesky factorization failed even after diagonal jitter escalation.
    /// `pivot` is the first non-positive pivot encountered at the final
    /// jitter level.
    #[error("covariance factorization failed at pivot {pivot} after jitter escalation up to {max_jitter:.3e}")]
    Factorization { pivot: usize, max_jitter: f64 },

    /// Input data cannot support the requested operation (duplicate times,
    /// empty series, too few points for a prior box, ...).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The objective was non-finite at a start point, or every start failed.
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// The Hessian at the reported peak is not positive definite, so the
    /// Laplace evidence cannot be trusted. Inspect the attached diagnostics:
    /// a peak on the prior boundary or a multimodal surface are the usual
    /// causes.
    #[error("Laplace Hessian is not positive definite: {0}")]
    UntrustedLaplace(crate::evidence::LaplaceDiagnostics),

    /// The Monte-Carlo evidence estimate has too little effective sample
    /// size to be quotable. The partial result is attached for inspection.
    #[error("unreliable Monte-Carlo evidence estimate: effective sample size {ess:.2} < {min_ess}")]
    UnreliableEstimate {
        ess: f64,
        min_ess: f64,
        partial: Box<crate::evidence::EvidenceResult>,
    },

    /// Bayes factors only make sense between evidences on the same data.
    #[error("evidence results were computed on different datasets")]
    MismatchedDatasets,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
