//! Mono-phone HMMs: composite graphs from transcripts, Viterbi and
//! forward-backward alignment to state–mixture posteriors, flat-start
//! training, speaker-feature state models, HMM-aligned statistics, MAP
//! adaptation and LLR scoring.

mod align;
mod graph;
mod model;
mod stats;
mod train;

use thiserror::Error;

pub use align::{
    align, align_emissions, fb_align, forward_backward, viterbi_align, viterbi_decode, AlignAlgo, AlignOptions,
    Alignment, Emissions, Occupancy, StateEmitters,
};
pub use graph::{build_composite_graph, CompositeHmm, GraphState, SilencePolicy, SilenceSlot};
pub use model::{PhoneHmm, PhoneHmmSet, StateModels, SILENCE_LABEL, STATES_PER_PHONE};
pub use stats::{
    accumulate_hmm_stats, alignment_csv, hmm_map_adapt, reestimate_state_gmms, score_hmm_fb, score_hmm_viterbi,
    HmmStats, ReestimateOptions,
};
pub use train::{flat_start_segmentation, train_monophone_hmms, HmmTrainConfig, HmmTraining, TrainingUtterance};

use crate::features::FeatureError;
use crate::gmm::GmmError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HmmError {
    #[error("phone `{0}` is not in the inventory")]
    UnknownPhone(String),
    #[error("empty transcript")]
    EmptyTranscript,
    #[error("no valid path: {frames} frames, graph needs at least {min_frames}")]
    NoValidPath { frames: usize, min_frames: usize },
    #[error("phone `{0}` never occurs in the training transcripts")]
    PhoneMissing(String),
    #[error("utterance has {frames} frames, flat start needs {needed}")]
    InsufficientFrames { frames: usize, needed: usize },
    #[error("frame count mismatch: {left} vs {right}")]
    FrameCountMismatch { left: usize, right: usize },
    #[error("feature dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[cfg(test)]
mod tests;
