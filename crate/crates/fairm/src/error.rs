use thiserror::Error;

use crate::filter::FeasibilityDiagnostic;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("environment `{env_id}` has {n} observations, need at least {min}")]
    EnvironmentTooSmall {
        env_id: String,
        n: usize,
        min: usize,
    },

    #[error("duplicate environment id `{0}`")]
    DuplicateEnvId(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { pivot: f64, index: usize },

    #[error("estimated feasible set is empty: the invariance constraints appear infeasible at the current thresholds")]
    InfeasibleFilter { diagnostic: FeasibilityDiagnostic },

    #[error("lasso did not converge for candidate {candidate} after {iterations} sweeps (kkt residual {kkt_residual:.3e})")]
    LassoNonConvergence {
        candidate: usize,
        iterations: usize,
        kkt_residual: f64,
    },

    #[error("idx file `{path}`: bad magic number (expected {expected:#010x}, found {found:#010x})")]
    IdxBadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("idx file `{path}`: truncated ({context})")]
    IdxTruncated { path: String, context: String },

    #[error("idx files disagree on item count: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("idx file `{path}`: unsupported image shape {rows}x{cols} (expected 28x28)")]
    IdxBadShape {
        path: String,
        rows: usize,
        cols: usize,
    },

    #[error("not enough images for task: need {needed}, found {found}")]
    NotEnoughImages { needed: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
