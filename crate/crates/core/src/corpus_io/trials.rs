use std::fmt;
use std::path::Path;
use std::str::FromStr;

use super::IoError;

/// Speaker × phrase match combination of a text-dependent trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialType {
    /// Target speaker, correct phrase. The only genuine trial type.
    TargetCorrect,
    ImposterCorrect,
    TargetWrong,
    ImposterWrong,
}

impl TrialType {
    pub const ALL: [TrialType; 4] = [
        TrialType::TargetCorrect,
        TrialType::ImposterCorrect,
        TrialType::TargetWrong,
        TrialType::ImposterWrong,
    ];
    pub const NON_TARGET: [TrialType; 3] = [
        TrialType::ImposterCorrect,
        TrialType::TargetWrong,
        TrialType::ImposterWrong,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TrialType::TargetCorrect => "TC",
            TrialType::ImposterCorrect => "IC",
            TrialType::TargetWrong => "TW",
            TrialType::ImposterWrong => "IW",
        }
    }

    pub fn is_target(self) -> bool {
        self == TrialType::TargetCorrect
    }

    /// Classifies a trial from speaker and phrase agreement.
    pub fn classify(same_speaker: bool, same_phrase: bool) -> Self {
        match (same_speaker, same_phrase) {
            (true, true) => TrialType::TargetCorrect,
            (false, true) => TrialType::ImposterCorrect,
            (true, false) => TrialType::TargetWrong,
            (false, false) => TrialType::ImposterWrong,
        }
    }
}

impl fmt::Display for TrialType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TrialType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TC" => Ok(TrialType::TargetCorrect),
            "IC" => Ok(TrialType::ImposterCorrect),
            "TW" => Ok(TrialType::TargetWrong),
            "IW" => Ok(TrialType::ImposterWrong),
            other => Err(format!("unknown trial type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub model_id: String,
    pub test_utt_id: String,
    pub trial_type: TrialType,
    pub is_target: bool,
}

impl Trial {
    pub fn new(model_id: impl Into<String>, test_utt_id: impl Into<String>, trial_type: TrialType) -> Self {
        Self {
            model_id: model_id.into(),
            test_utt_id: test_utt_id.into(),
            trial_type,
            is_target: trial_type.is_target(),
        }
    }
}

/// Parses `model_id utt_id TYPE` lines; blank lines and `#` comments are skipped.
pub fn parse_trials(text: &str) -> Result<Vec<Trial>, IoError> {
    let mut trials = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parse_err = |message: String| IoError::Parse { line: idx + 1, message };
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let trial_type = fields[2].parse::<TrialType>().map_err(parse_err)?;
        trials.push(Trial::new(fields[0], fields[1], trial_type));
    }
    Ok(trials)
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_trials(&text)
}

pub fn format_trials(trials: &[Trial]) -> String {
    trials
        .iter()
        .map(|t| format!("{} {} {}\n", t.model_id, t.test_utt_id, t.trial_type))
        .collect()
}

pub(crate) fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}
