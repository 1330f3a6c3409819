//! End-to-end systems over an experiment: background training, speaker
//! enrollment, trial scoring and metrics for GMM-UBM, i-vector, GMM-HMM and
//! i-vector/HMM, with separate alignment and speaker feature streams.

mod cache;
mod systems;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus_io::hex_digest;
use crate::eval::{format_metrics_kv, format_metrics_table, DcfParams, MetricRow, ScoreSet};
use crate::gmm::{EmConfig, MapConfig};
use crate::hmm::{AlignAlgo, HmmTrainConfig};
use crate::ivector::EnrollMode;

pub use cache::{StageCache, CACHE_DIR_ENV};
pub use systems::{feature_view, Pipeline};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid system configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

pub(crate) fn stage<E>(name: &'static str) -> impl FnOnce(E) -> PipelineError
where
    E: std::error::Error + Send + Sync + 'static,
{
    move |e| PipelineError::Stage {
        stage: name,
        source: Box::new(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    GmmUbm,
    Ivector,
    GmmHmm,
    IvectorHmm,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [
        SystemKind::GmmUbm,
        SystemKind::Ivector,
        SystemKind::GmmHmm,
        SystemKind::IvectorHmm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::GmmUbm => "gmm-ubm",
            SystemKind::Ivector => "ivector",
            SystemKind::GmmHmm => "gmm-hmm",
            SystemKind::IvectorHmm => "ivector-hmm",
        }
    }

    pub fn uses_hmm(self) -> bool {
        matches!(self, SystemKind::GmmHmm | SystemKind::IvectorHmm)
    }

    pub fn uses_ivectors(self) -> bool {
        matches!(self, SystemKind::Ivector | SystemKind::IvectorHmm)
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown system `{s}` (expected gmm-ubm, ivector, gmm-hmm or ivector-hmm)"))
    }
}

/// Everything that determines one system's output.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Alignment algorithm; present exactly for HMM systems.
    pub align: Option<AlignAlgo>,
    /// Feature stream for HMM training and alignment. `a+b` concatenates
    /// streams frame by frame.
    pub align_stream: String,
    /// Feature stream for UBM / state GMMs, statistics and scoring.
    pub speaker_stream: String,
    pub ubm_components: usize,
    pub em: EmConfig,
    pub hmm: HmmTrainConfig,
    pub rank: usize,
    pub tmatrix_iterations: usize,
    pub map: MapConfig,
    pub exclude_silence: bool,
    pub enroll_mode: EnrollMode,
    pub prune: f64,
    pub seed: u64,
    pub mdcf08: DcfParams,
    pub mdcf10: DcfParams,
}

impl SystemConfig {
    /// Desk-scale defaults: UBM 64, `G = 4` (`G_sil = 8`), `R = 20`.
    pub fn new(kind: SystemKind, align: Option<AlignAlgo>) -> Self {
        Self {
            kind,
            align,
            align_stream: crate::corpus_io::DEFAULT_STREAM.to_string(),
            speaker_stream: crate::corpus_io::DEFAULT_STREAM.to_string(),
            ubm_components: 64,
            em: EmConfig::default(),
            hmm: HmmTrainConfig {
                mixtures: 4,
                silence_mixtures: 8,
                ..HmmTrainConfig::default()
            },
            rank: 20,
            tmatrix_iterations: 10,
            map: MapConfig::default(),
            exclude_silence: true,
            enroll_mode: EnrollMode::SumStats,
            prune: 1e-8,
            seed: 0,
            mdcf08: DcfParams::MDCF08,
            mdcf10: DcfParams::MDCF10,
        }
    }

    /// The six systems compared in the reference table, sharing `base`'s
    /// sizes and streams.
    pub fn standard_six(base: &SystemConfig) -> Vec<SystemConfig> {
        let with = |kind, align| SystemConfig {
            kind,
            align,
            ..base.clone()
        };
        vec![
            with(SystemKind::GmmUbm, None),
            with(SystemKind::Ivector, None),
            with(SystemKind::GmmHmm, Some(AlignAlgo::Viterbi)),
            with(SystemKind::GmmHmm, Some(AlignAlgo::ForwardBackward)),
            with(SystemKind::IvectorHmm, Some(AlignAlgo::Viterbi)),
            with(SystemKind::IvectorHmm, Some(AlignAlgo::ForwardBackward)),
        ]
    }

    pub fn name(&self) -> String {
        match self.align {
            Some(a) => format!("{}-{}", self.kind, a),
            None => self.kind.to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        match (self.kind.uses_hmm(), self.align) {
            (true, None) => return bad(format!("{} needs an alignment algorithm", self.kind)),
            (false, Some(a)) => return bad(format!("{} takes no alignment algorithm, got {a}", self.kind)),
            _ => {}
        }
        if self.align_stream.is_empty() || self.speaker_stream.is_empty() {
            return bad("feature stream names must not be empty".into());
        }
        if !self.kind.uses_hmm() && self.ubm_components == 0 {
            return bad("UBM needs at least one component".into());
        }
        if self.kind.uses_ivectors() && self.rank == 0 {
            return bad("i-vector rank must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.prune) {
            return bad(format!("pruning threshold {} is outside [0, 1)", self.prune));
        }
        let cfg = |e: &dyn std::error::Error| PipelineError::Config(e.to_string());
        self.em.validate().map_err(|e| cfg(&e))?;
        self.map.validate().map_err(|e| cfg(&e))?;
        self.hmm.validate().map_err(|e| cfg(&e))?;
        self.mdcf08.validate().map_err(|e| cfg(&e))?;
        self.mdcf10.validate().map_err(|e| cfg(&e))?;
        Ok(())
    }

    /// Content hash of the configuration; with the corpus digest it
    /// identifies a run exactly.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{self:?}").as_bytes());
        hex_digest(h)
    }
}

/// One system's scores and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemReport {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: Vec<MetricRow>,
    pub scores: ScoreSet,
    /// Cached model files used by this run, when a cache directory is set.
    pub model_paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub corpus_digest: String,
    pub systems: Vec<SystemReport>,
}

impl ExperimentReport {
    pub fn format_table(&self) -> String {
        let mut out = format!("corpus {}\n", &self.corpus_digest[..16.min(self.corpus_digest.len())]);
        for s in &self.systems {
            out.push_str(&format_metrics_table(
                &format!("{} (config {})", s.name, &s.config_hash[..12]),
                &s.metrics,
            ));
        }
        out
    }

    /// `system.TYPE.metric = value` lines plus provenance keys.
    pub fn format_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "corpus.digest = {}", self.corpus_digest);
        for s in &self.systems {
            let _ = writeln!(out, "{}.config_hash = {}", s.name, s.config_hash);
            let _ = writeln!(out, "{}.seed = {}", s.name, s.seed);
            for (k, p) in s.model_paths.iter().enumerate() {
                let _ = writeln!(out, "{}.model.{k} = {p}", s.name);
            }
            out.push_str(&format_metrics_kv(&s.name, &s.metrics));
        }
        out
    }
}
