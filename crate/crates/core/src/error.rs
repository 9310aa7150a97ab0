//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, estimation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// `I - A` is numerically singular; the SEM has no well-defined
    /// stationary solution.
    #[error("non-invertible SEM: smallest singular value of I - A is {min_singular:.3e}")]
    NonInvertibleSem { min_singular: f64 },

    /// The combinatorial path-matrix oracle refuses graphs above its
    /// enumeration cap.
    #[error("oracle scale exceeded: {nodes} nodes (cap {cap})")]
    OracleScaleExceeded { nodes: usize, cap: usize },

    /// Latent-block marginalization hit a singular `I - A_LL` or a unit
    /// diagonal entry of the self-loop matrix.
    #[error("latent projection degenerate: {0}")]
    LatentProjectionDegenerate(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Covariance could not be factorized even after ridge stabilization.
    #[error("ill-conditioned covariance: {0}")]
    IllConditionedCovariance(String),

    /// Graphical lasso did not converge or lost positive-definiteness.
    #[error("glasso failed at alpha={alpha}: {reason} (duality gap estimate {gap:.3e})")]
    GlassoFailed { alpha: f64, reason: String, gap: f64 },

    /// A precision matrix diagonal entry is not strictly positive.
    #[error("non-positive precision diagonal at index {index}: {value}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    /// A perturbation must shift at least one node by a non-zero amount.
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),

    /// Configuration rejected before any work was done.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Unknown node label in a fixed scenario.
    #[error("unknown scenario target: {0:?}")]
    UnknownTarget(String),

    /// Every column was removed during preprocessing.
    #[error("empty after preprocessing")]
    EmptyAfterPreprocessing,

    /// Scores and preprocessing report disagree on labels.
    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    /// Input table is malformed (no data rows, no numeric columns, ...).
    #[error("invalid input data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
