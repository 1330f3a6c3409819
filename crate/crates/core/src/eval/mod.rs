//! Trial-protocol execution, EER and normalized minimum detection cost,
//! score files and metric reports.
//!
//! Scores are oriented so that higher means more target-like.

mod metrics;
mod report;

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus_io::{Trial, TrialType};

pub use metrics::{compute_eer, compute_mindcf, operating_points, DcfParams, OperatingPoint};
pub use report::{
    compute_metric_rows, format_metrics_kv, format_metrics_table, format_scores, parse_scores, MetricRow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unknown models: {}", .0.join(", "))]
    MissingModels(Vec<String>),
    #[error("unknown utterances: {}", .0.join(", "))]
    MissingUtterances(Vec<String>),
    #[error("need at least one target and one non-target score, got {targets} and {nontargets}")]
    EmptyClass { targets: usize, nontargets: usize },
    #[error("non-finite score for model `{model}` on `{utt}`")]
    NonFiniteScore { model: String, utt: String },
    #[error("scoring model `{model}` on `{utt}`: {message}")]
    Scoring {
        model: String,
        utt: String,
        message: String,
    },
    #[error("invalid detection-cost parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub model_id: String,
    pub utt_id: String,
    pub trial_type: TrialType,
    pub score: f64,
    pub is_target: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub records: Vec<ScoreRecord>,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Target and non-target scores among records whose type is in `filter`.
    pub fn split(&self, filter: &[TrialType]) -> (Vec<f64>, Vec<f64>) {
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        for r in self.records.iter().filter(|r| filter.contains(&r.trial_type)) {
            if r.is_target {
                targets.push(r.score);
            } else {
                nontargets.push(r.score);
            }
        }
        (targets, nontargets)
    }

    pub fn trial_types(&self) -> BTreeSet<TrialType> {
        self.records.iter().map(|r| r.trial_type).collect()
    }
}

/// Anything that can score a model against a test utterance.
pub trait Scorer: Sync {
    fn has_model(&self, model_id: &str) -> bool;
    fn has_utterance(&self, utt_id: &str) -> bool;
    fn score(&self, model_id: &str, utt_id: &str) -> Result<f64, String>;
}

/// Scores every trial in input order. All unresolvable references are
/// collected and reported together before any scoring happens.
pub fn run_protocol<S: Scorer + ?Sized>(trials: &[Trial], scorer: &S) -> Result<ScoreSet, EvalError> {
    let missing_models: BTreeSet<&str> = trials
        .iter()
        .map(|t| t.model_id.as_str())
        .filter(|m| !scorer.has_model(m))
        .collect();
    if !missing_models.is_empty() {
        return Err(EvalError::MissingModels(
            missing_models.into_iter().map(String::from).collect(),
        ));
    }
    let missing_utts: BTreeSet<&str> = trials
        .iter()
        .map(|t| t.test_utt_id.as_str())
        .filter(|u| !scorer.has_utterance(u))
        .collect();
    if !missing_utts.is_empty() {
        return Err(EvalError::MissingUtterances(
            missing_utts.into_iter().map(String::from).collect(),
        ));
    }
    let records = trials
        .par_iter()
        .map(|t| {
            let score = scorer
                .score(&t.model_id, &t.test_utt_id)
                .map_err(|message| EvalError::Scoring {
                    model: t.model_id.clone(),
                    utt: t.test_utt_id.clone(),
                    message,
                })?;
            if !score.is_finite() {
                return Err(EvalError::NonFiniteScore {
                    model: t.model_id.clone(),
                    utt: t.test_utt_id.clone(),
                });
            }
            Ok(ScoreRecord {
                model_id: t.model_id.clone(),
                utt_id: t.test_utt_id.clone(),
                trial_type: t.trial_type,
                score,
                is_target: t.is_target,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScoreSet { records })
}
