//! Diagonal-covariance GMMs: densities and posteriors, EM training by
//! binary splitting, sufficient statistics, mean-only MAP adaptation and
//! GMM-UBM log-likelihood-ratio scoring.

mod adapt;
mod em;
mod model;

use thiserror::Error;

pub use adapt::{accumulate_rows, accumulate_stats, map_adapt, score_gmm_ubm, GmmStats, MapConfig};
pub use em::{train_gmm_em, EmConfig, EmTraining};
pub use model::{gmm_log_likelihood, gmm_posteriors, Gmm};

pub(crate) use adapt::map_means;
pub(crate) use em::{global_moments, reseed, split_heaviest, MomentAcc};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmmError {
    #[error("frame dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} distinct frames, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
