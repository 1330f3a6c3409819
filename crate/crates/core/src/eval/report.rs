use std::fmt::Write as _;

use super::metrics::{eer_of, mindcf_of, DcfParams};
use super::{EvalError, ScoreRecord, ScoreSet};
use crate::corpus_io::TrialType;

/// Metrics for target-correct trials against one non-target trial type.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub trial_type: TrialType,
    pub targets: usize,
    pub nontargets: usize,
    pub eer: f64,
    pub mdcf08: f64,
    pub mdcf10: f64,
}

/// One row per non-target trial type present in `scores`, each paired
/// with all target trials.
pub fn compute_metric_rows(
    scores: &ScoreSet,
    mdcf08: &DcfParams,
    mdcf10: &DcfParams,
) -> Result<Vec<MetricRow>, EvalError> {
    scores
        .trial_types()
        .into_iter()
        .filter(|t| !t.is_target())
        .map(|trial_type| {
            let (t, n) = scores.split(&[TrialType::TargetCorrect, trial_type]);
            Ok(MetricRow {
                trial_type,
                targets: t.len(),
                nontargets: n.len(),
                eer: eer_of(&t, &n)?,
                mdcf08: mindcf_of(&t, &n, mdcf08)?,
                mdcf10: mindcf_of(&t, &n, mdcf10)?,
            })
        })
        .collect()
}

/// Human-readable table; EER in percent.
pub fn format_metrics_table(system: &str, rows: &[MetricRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{system}");
    let _ = writeln!(out, "  type  #tgt  #non   EER(%)  MDCF08  MDCF10");
    for r in rows {
        let _ = writeln!(
            out,
            "  {:<4} {:>5} {:>5} {:>8.2} {:>7.4} {:>7.4}",
            r.trial_type.code(),
            r.targets,
            r.nontargets,
            100.0 * r.eer,
            r.mdcf08,
            r.mdcf10
        );
    }
    out
}

/// `prefix.TYPE.metric = value` lines; EER as a fraction.
pub fn format_metrics_kv(prefix: &str, rows: &[MetricRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let key = if prefix.is_empty() {
            r.trial_type.code().to_string()
        } else {
            format!("{prefix}.{}", r.trial_type.code())
        };
        let _ = writeln!(out, "{key}.eer = {}", r.eer);
        let _ = writeln!(out, "{key}.mdcf08 = {}", r.mdcf08);
        let _ = writeln!(out, "{key}.mdcf10 = {}", r.mdcf10);
    }
    out
}

fn label(is_target: bool) -> &'static str {
    if is_target {
        "target"
    } else {
        "nontarget"
    }
}

/// `model_id utt_id TYPE score label` per line. Scores use the shortest
/// representation that round-trips exactly.
pub fn format_scores(scores: &ScoreSet) -> String {
    let mut out = String::new();
    for r in &scores.records {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            r.model_id,
            r.utt_id,
            r.trial_type.code(),
            r.score,
            label(r.is_target)
        );
    }
    out
}

pub fn parse_scores(text: &str) -> Result<ScoreSet, EvalError> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [model, utt, kind, score, lab] = fields[..] else {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        };
        let trial_type: TrialType = kind.parse().map_err(err)?;
        let score: f64 = score.parse().map_err(|_| err(format!("bad score `{score}`")))?;
        if !score.is_finite() {
            return Err(err(format!("non-finite score `{score}`")));
        }
        if lab != label(trial_type.is_target()) {
            return Err(err(format!("label `{lab}` contradicts trial type {kind}")));
        }
        records.push(ScoreRecord {
            model_id: model.to_string(),
            utt_id: utt.to_string(),
            trial_type,
            score,
            is_target: trial_type.is_target(),
        });
    }
    Ok(ScoreSet { records })
}
