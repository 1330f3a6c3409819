//! Layered `key = value` settings: built-in defaults, then an optional
//! config file, then command-line overrides. Keys are namespaced by the
//! stage they configure and unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use tdsv::corpus_io::SyntheticSpec;
use tdsv::eval::DcfParams;
use tdsv::features::{FrontendConfig, FrontendKind};
use tdsv::hmm::AlignAlgo;
use tdsv::ivector::EnrollMode;
use tdsv::pipeline::{SystemConfig, SystemKind};

/// Every recognized key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "pipeline.seed",
        "2017",
        "seed for every random choice (synthetic data, dither, T init)",
    ),
    ("pipeline.workers", "0", "worker threads, 0 = one per core"),
    (
        "pipeline.system",
        "gmm-ubm",
        "system kind: gmm-ubm, ivector, gmm-hmm, ivector-hmm",
    ),
    (
        "pipeline.systems",
        "standard",
        "run-experiment systems: `standard` or comma-separated names",
    ),
    (
        "pipeline.align_stream",
        "feat",
        "feature stream for HMM training and alignment (`a+b` concatenates)",
    ),
    (
        "pipeline.speaker_stream",
        "feat",
        "feature stream for speaker statistics and scoring",
    ),
    ("frontend.kind", "mfcc", "mfcc or fbank"),
    ("frontend.num_filters", "40", "mel filters"),
    ("frontend.num_cepstra", "19", "cepstral coefficients"),
    ("frontend.include_energy", "true", "append log-energy to MFCCs"),
    ("frontend.deltas", "true", "append deltas and delta-deltas"),
    ("frontend.delta_window", "2", "delta regression half-window"),
    ("frontend.cmvn", "true", "per-utterance mean and variance normalization"),
    ("frontend.frame_length_s", "0.025", "analysis window in seconds"),
    ("frontend.frame_shift_s", "0.010", "frame shift in seconds"),
    ("frontend.preemphasis", "0.97", "pre-emphasis coefficient"),
    ("frontend.dither", "0", "dither amplitude"),
    ("gmm.components", "64", "UBM components (power of two)"),
    ("gmm.iterations", "10", "EM iterations per split"),
    (
        "gmm.tolerance",
        "1e-6",
        "per-frame log-likelihood gain that ends a stage early",
    ),
    (
        "gmm.variance_floor_ratio",
        "1e-3",
        "variance floor relative to the global variance",
    ),
    ("gmm.relevance", "16", "MAP relevance factor"),
    ("hmm.align", "viterbi", "alignment algorithm: viterbi or fb"),
    ("hmm.mixtures", "4", "mixtures per speech state"),
    ("hmm.silence_mixtures", "8", "mixtures per silence state"),
    ("hmm.initial_rounds", "4", "re-estimation rounds before the first split"),
    ("hmm.rounds_per_split", "4", "re-estimation rounds after each split"),
    ("hmm.prune", "1e-8", "posterior pruning threshold"),
    (
        "hmm.exclude_silence",
        "true",
        "drop silence states from speaker statistics",
    ),
    ("ivector.rank", "20", "total variability rank"),
    ("ivector.iterations", "10", "T-matrix EM iterations"),
    (
        "ivector.enroll",
        "sum",
        "multi-utterance enrollment: sum (statistics) or average (i-vectors)",
    ),
    (
        "eval.mdcf08",
        "10,1,0.01",
        "C_miss,C_fa,P_target of the first detection cost",
    ),
    (
        "eval.mdcf10",
        "1,1,0.001",
        "C_miss,C_fa,P_target of the second detection cost",
    ),
    ("synth.speakers", "10", "evaluation speakers"),
    ("synth.phrases", "4", "pass-phrases"),
    ("synth.phones_per_phrase", "5", "phones per phrase"),
    ("synth.utterances", "8", "utterances per speaker and phrase"),
    ("synth.phones", "8", "phone inventory size"),
    ("synth.dim", "12", "feature dimension"),
    ("synth.speaker_shift", "0.35", "std of per-speaker state offsets"),
    (
        "synth.speaker_rank",
        "0",
        "latent speaker factors, 0 = independent offsets",
    ),
    ("synth.session_shift", "0.2", "std of per-utterance offsets"),
    ("synth.noise", "1.0", "std of frame noise"),
    ("synth.background_speakers", "30", "background speakers"),
    ("synth.background_utterances", "12", "utterances per background speaker"),
    ("synth.enroll_per_model", "3", "enrollment utterances per model"),
    ("synth.bottleneck_dim", "0", "dimension of the `bn` stream, 0 = none"),
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("{file}:{line}: expected `key = value`")]
    Syntax { file: String, line: usize },
    #[error("`{key} = {value}`: {message}")]
    Value {
        key: String,
        value: String,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let (k, _, _) = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Applies a `key = value` assignment as written on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Value {
            key: assignment.to_string(),
            value: String::new(),
            message: "expected key=value".into(),
        })?;
        self.set(k.trim(), v)
    }

    pub fn apply_text(&mut self, file: &str, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
                file: file.to_string(),
                line: i + 1,
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.apply_text(&path.display().to_string(), &text)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a registered configuration key"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let value = self.get(key);
        value.parse().map_err(|e: T::Err| ConfigError::Value {
            key: key.to_string(),
            value: value.to_string(),
            message: e.to_string(),
        })
    }

    fn value_error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Value {
            key: key.to_string(),
            value: self.get(key).to_string(),
            message: message.into(),
        }
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.parse("pipeline.seed")
    }

    pub fn workers(&self) -> Result<usize, ConfigError> {
        self.parse("pipeline.workers")
    }

    fn dcf(&self, key: &str) -> Result<DcfParams, ConfigError> {
        let parts: Vec<f64> = self
            .get(key)
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| self.value_error(key, e.to_string()))?;
        match parts[..] {
            [c_miss, c_fa, p_target] => Ok(DcfParams { c_miss, c_fa, p_target }),
            _ => Err(self.value_error(key, "expected C_miss,C_fa,P_target")),
        }
    }

    /// System configuration of `kind` with every shared key applied.
    pub fn system(&self, kind: SystemKind, align: Option<AlignAlgo>) -> Result<SystemConfig, ConfigError> {
        let mut c = SystemConfig::new(kind, align);
        c.align_stream = self.get("pipeline.align_stream").to_string();
        c.speaker_stream = self.get("pipeline.speaker_stream").to_string();
        c.seed = self.seed()?;
        c.ubm_components = self.parse("gmm.components")?;
        c.em.iterations = self.parse("gmm.iterations")?;
        c.em.tolerance = self.parse("gmm.tolerance")?;
        c.em.variance_floor_ratio = self.parse("gmm.variance_floor_ratio")?;
        c.map.relevance = self.parse("gmm.relevance")?;
        c.hmm.mixtures = self.parse("hmm.mixtures")?;
        c.hmm.silence_mixtures = self.parse("hmm.silence_mixtures")?;
        c.hmm.initial_rounds = self.parse("hmm.initial_rounds")?;
        c.hmm.rounds_per_split = self.parse("hmm.rounds_per_split")?;
        c.prune = self.parse("hmm.prune")?;
        c.exclude_silence = self.parse("hmm.exclude_silence")?;
        c.rank = self.parse("ivector.rank")?;
        c.tmatrix_iterations = self.parse("ivector.iterations")?;
        c.enroll_mode = match self.get("ivector.enroll") {
            "sum" => EnrollMode::SumStats,
            "average" => EnrollMode::AverageIvectors,
            _ => return Err(self.value_error("ivector.enroll", "expected sum or average")),
        };
        c.mdcf08 = self.dcf("eval.mdcf08")?;
        c.mdcf10 = self.dcf("eval.mdcf10")?;
        c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(c)
    }

    /// The single system named by `pipeline.system` and `hmm.align`.
    pub fn selected_system(&self) -> Result<SystemConfig, ConfigError> {
        let kind: SystemKind = self.parse("pipeline.system")?;
        let align = if kind.uses_hmm() {
            Some(self.parse("hmm.align")?)
        } else {
            None
        };
        self.system(kind, align)
    }

    /// Systems for `run-experiment`: the standard six, or a list of names
    /// such as `gmm-ubm,gmm-hmm-fb`.
    pub fn experiment_systems(&self) -> Result<Vec<SystemConfig>, ConfigError> {
        let list = self.get("pipeline.systems");
        if list == "standard" {
            let base = self.system(SystemKind::GmmUbm, None)?;
            return Ok(SystemConfig::standard_six(&base));
        }
        list.split(',')
            .map(|name| {
                let name = name.trim();
                let (kind, align) = match name.rsplit_once('-') {
                    Some((k, a @ ("viterbi" | "fb"))) => (k, Some(a)),
                    _ => (name, None),
                };
                let kind: SystemKind = kind.parse().map_err(|m| self.value_error("pipeline.systems", m))?;
                let align = match (kind.uses_hmm(), align) {
                    (true, Some(a)) => Some(a.parse().map_err(|m| self.value_error("pipeline.systems", m))?),
                    (true, None) => Some(self.parse("hmm.align")?),
                    (false, None) => None,
                    (false, Some(_)) => {
                        return Err(self.value_error("pipeline.systems", format!("{kind} takes no alignment")))
                    }
                };
                self.system(kind, align)
            })
            .collect()
    }

    pub fn frontend(&self) -> Result<(FrontendConfig, FrontendKind, bool, bool), ConfigError> {
        let config = FrontendConfig {
            num_filters: self.parse("frontend.num_filters")?,
            num_cepstra: self.parse("frontend.num_cepstra")?,
            include_energy: self.parse("frontend.include_energy")?,
            delta_window: self.parse("frontend.delta_window")?,
            frame_length_s: self.parse("frontend.frame_length_s")?,
            frame_shift_s: self.parse("frontend.frame_shift_s")?,
            preemphasis: self.parse("frontend.preemphasis")?,
            dither: self.parse("frontend.dither")?,
            dither_seed: self.seed()?,
            ..FrontendConfig::default()
        };
        config.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let kind = match self.get("frontend.kind") {
            "mfcc" => FrontendKind::Mfcc,
            "fbank" => FrontendKind::Fbank,
            _ => return Err(self.value_error("frontend.kind", "expected mfcc or fbank")),
        };
        Ok((
            config,
            kind,
            self.parse("frontend.deltas")?,
            self.parse("frontend.cmvn")?,
        ))
    }

    pub fn synthetic_spec(&self) -> Result<SyntheticSpec, ConfigError> {
        let spec = SyntheticSpec {
            num_speakers: self.parse("synth.speakers")?,
            num_phrases: self.parse("synth.phrases")?,
            phones_per_phrase: self.parse("synth.phones_per_phrase")?,
            utterances_per_cell: self.parse("synth.utterances")?,
            num_phones: self.parse("synth.phones")?,
            dim: self.parse("synth.dim")?,
            speaker_shift: self.parse("synth.speaker_shift")?,
            speaker_rank: self.parse("synth.speaker_rank")?,
            session_shift: self.parse("synth.session_shift")?,
            noise: self.parse("synth.noise")?,
            background_speakers: self.parse("synth.background_speakers")?,
            background_utterances: self.parse("synth.background_utterances")?,
            enroll_per_model: self.parse("synth.enroll_per_model")?,
            bottleneck_dim: self.parse("synth.bottleneck_dim")?,
            seed: self.seed()?,
            ..SyntheticSpec::default()
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    /// `key = value` lines in key order.
    pub fn effective(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (*k, v.as_str()))
    }
}
