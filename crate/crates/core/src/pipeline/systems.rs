use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;

use super::cache::StageCache;
use super::{stage, ExperimentReport, PipelineError, SystemConfig, SystemKind, SystemReport};
use crate::corpus_io::{Experiment, IoError, Model, Utterance};
use crate::eval::{compute_metric_rows, run_protocol, Scorer};
use crate::features::{tandem_concat, FeatureMatrix};
use crate::gmm::{accumulate_stats, map_adapt, score_gmm_ubm, train_gmm_em, Gmm, GmmStats};
use crate::hmm::{
    accumulate_hmm_stats, align, build_composite_graph, hmm_map_adapt, reestimate_state_gmms, score_hmm_fb,
    score_hmm_viterbi, train_monophone_hmms, AlignAlgo, AlignOptions, Alignment, PhoneHmmSet, ReestimateOptions,
    StateModels, SILENCE_LABEL,
};
use crate::ivector::{enroll_ivector, extract_ivector, train_tmatrix, trial_score, IvectorError, TotalVariability};

/// Resolves a stream spec (`name` or `a+b+…`, concatenated frame by frame)
/// for one utterance.
pub fn feature_view<'a>(utt: &'a Utterance, spec: &str) -> Result<Cow<'a, FeatureMatrix>, IoError> {
    let mut names = spec.split('+');
    let first = utt.stream(names.next().unwrap_or(spec))?;
    let mut out = Cow::Borrowed(first);
    for name in names {
        out = Cow::Owned(tandem_concat(&out, utt.stream(name)?)?);
    }
    Ok(out)
}

/// Features of every corpus utterance under one stream spec, concatenated
/// once up front when the spec names several streams.
struct Features<'a> {
    exp: &'a Experiment,
    spec: &'a str,
    owned: HashMap<&'a str, FeatureMatrix>,
}

impl<'a> Features<'a> {
    fn new(exp: &'a Experiment, spec: &'a str) -> Result<Self, PipelineError> {
        let owned = if spec.contains('+') {
            exp.corpus
                .utterances()
                .par_iter()
                .map(|u| Ok((u.utt_id.as_str(), feature_view(u, spec)?.into_owned())))
                .collect::<Result<_, IoError>>()
                .map_err(stage("feature streams"))?
        } else {
            HashMap::new()
        };
        Ok(Self { exp, spec, owned })
    }

    fn get(&self, utt_id: &str) -> Result<&FeatureMatrix, IoError> {
        if let Some(m) = self.owned.get(utt_id) {
            return Ok(m);
        }
        self.exp.corpus.require(utt_id)?.stream(self.spec)
    }
}

/// Runs systems over experiments, reusing trained background models and
/// alignments between systems that share them.
#[derive(Debug, Default)]
pub struct Pipeline {
    cache: StageCache,
    pub(super) alignments: HashMap<String, Arc<Alignment>>,
}

/// Identity of everything shared by one run: the corpus, its background
/// subset and the configuration.
struct Run<'a> {
    exp: &'a Experiment,
    digest: &'a str,
    config: &'a SystemConfig,
    background: Vec<&'a Utterance>,
    /// Claimed phrase of every model, from its first enrollment utterance.
    model_transcripts: HashMap<&'a str, &'a [String]>,
    model_paths: Vec<String>,
}

impl Run<'_> {
    fn background_key(&self) -> String {
        self.exp.background.join("\n")
    }
}

fn model_transcripts(exp: &Experiment) -> Result<HashMap<&str, &[String]>, PipelineError> {
    exp.enrollments
        .iter()
        .map(|e| {
            let first = e
                .utt_ids
                .first()
                .ok_or_else(|| PipelineError::Config(format!("model `{}` has no enrollment utterances", e.model_id)))?;
            let u = exp.corpus.require(first).map_err(stage("enrollment"))?;
            Ok((e.model_id.as_str(), u.transcript().map_err(stage("enrollment"))?))
        })
        .collect()
}

impl Pipeline {
    pub fn new(cache: StageCache) -> Self {
        Self {
            cache,
            alignments: HashMap::new(),
        }
    }

    /// Cache directory from the environment, else memory only.
    pub fn from_env() -> Self {
        Self::new(StageCache::from_env())
    }

    pub fn cache(&self) -> &StageCache {
        &self.cache
    }

    /// Every alignment computed so far.
    pub fn alignments(&self) -> impl Iterator<Item = &Alignment> {
        self.alignments.values().map(|a| a.as_ref())
    }

    pub fn run_system(&mut self, config: &SystemConfig, exp: &Experiment) -> Result<SystemReport, PipelineError> {
        let digest = exp.corpus.digest();
        self.run_with_digest(config, exp, &digest)
    }

    pub fn compare_systems(
        &mut self,
        configs: &[SystemConfig],
        exp: &Experiment,
    ) -> Result<ExperimentReport, PipelineError> {
        if configs.is_empty() {
            return Err(PipelineError::Config("no systems to compare".into()));
        }
        let digest = exp.corpus.digest();
        let systems = configs
            .iter()
            .map(|c| self.run_with_digest(c, exp, &digest))
            .collect::<Result<_, _>>()?;
        Ok(ExperimentReport {
            corpus_digest: digest,
            systems,
        })
    }

    fn start<'a>(config: &'a SystemConfig, exp: &'a Experiment, digest: &'a str) -> Result<Run<'a>, PipelineError> {
        config.validate()?;
        Ok(Run {
            exp,
            digest,
            config,
            background: exp.background_utterances().map_err(stage("background list"))?,
            model_transcripts: model_transcripts(exp)?,
            model_paths: Vec::new(),
        })
    }

    fn run_with_digest(
        &mut self,
        config: &SystemConfig,
        exp: &Experiment,
        digest: &str,
    ) -> Result<SystemReport, PipelineError> {
        let mut run = Self::start(config, exp, digest)?;
        info!("running {} (config {})", config.name(), config.hash());
        let scores = match config.kind {
            SystemKind::GmmUbm => {
                let scorer = self.gmm_ubm_scorer(&mut run)?;
                run_protocol(&exp.trials, &scorer)
            }
            SystemKind::Ivector => {
                let scorer = self.ivector_scorer(&mut run)?;
                run_protocol(&exp.trials, &scorer)
            }
            SystemKind::GmmHmm => {
                let scorer = self.gmm_hmm_scorer(&mut run)?;
                run_protocol(&exp.trials, &scorer)
            }
            SystemKind::IvectorHmm => {
                let scorer = self.ivector_hmm_scorer(&mut run)?;
                run_protocol(&exp.trials, &scorer)
            }
        }
        .map_err(stage("scoring"))?;
        let metrics = compute_metric_rows(&scores, &config.mdcf08, &config.mdcf10).map_err(stage("metrics"))?;
        Ok(SystemReport {
            name: config.name(),
            config_hash: config.hash(),
            seed: config.seed,
            metrics,
            scores,
            model_paths: run.model_paths,
        })
    }

    fn cached(
        &mut self,
        run: &mut Run<'_>,
        key: String,
        train: impl FnOnce() -> Result<Model, PipelineError>,
    ) -> Result<Model, PipelineError> {
        if let Some(p) = self.cache.path_for(&key) {
            run.model_paths.push(p.display().to_string());
        }
        self.cache.get_or_train(&key, train)
    }

    fn ubm_key(run: &Run<'_>) -> String {
        let c = run.config;
        StageCache::key(&[
            "ubm",
            run.digest,
            &run.background_key(),
            &c.speaker_stream,
            &c.ubm_components.to_string(),
            &format!("{:?}", c.em),
        ])
    }

    /// Background GMM on the speaker stream.
    pub fn train_ubm(&mut self, config: &SystemConfig, exp: &Experiment) -> Result<Gmm, PipelineError> {
        let digest = exp.corpus.digest();
        let mut run = Self::start(config, exp, &digest)?;
        self.ubm(&mut run)
    }

    fn ubm(&mut self, run: &mut Run<'_>) -> Result<Gmm, PipelineError> {
        let key = Self::ubm_key(run);
        let config = run.config;
        let background = run.background.clone();
        let model = self.cached(run, key, || {
            let parts = background
                .iter()
                .map(|u| feature_view(u, &config.speaker_stream))
                .collect::<Result<Vec<_>, IoError>>()
                .map_err(stage("UBM training"))?;
            let refs: Vec<&FeatureMatrix> = parts.iter().map(|c| c.as_ref()).collect();
            let pooled = FeatureMatrix::vstack(&refs).map_err(stage("UBM training"))?;
            let trained = train_gmm_em(&pooled, config.ubm_components, &config.em).map_err(stage("UBM training"))?;
            Ok(Model::Gmm(trained.gmm))
        })?;
        match model {
            Model::Gmm(g) => Ok(g),
            other => Err(wrong_kind("UBM", &other)),
        }
    }

    fn hmm_key(run: &Run<'_>) -> String {
        let c = run.config;
        StageCache::key(&[
            "hmm",
            run.digest,
            &run.background_key(),
            &c.align_stream,
            &format!("{:?}", c.hmm),
        ])
    }

    /// Mono-phone HMMs on the alignment stream. The inventory is every
    /// phone named in any corpus transcript.
    pub fn train_background_hmm(
        &mut self,
        config: &SystemConfig,
        exp: &Experiment,
    ) -> Result<PhoneHmmSet, PipelineError> {
        let digest = exp.corpus.digest();
        let mut run = Self::start(config, exp, &digest)?;
        self.hmm_set(&mut run)
    }

    fn hmm_set(&mut self, run: &mut Run<'_>) -> Result<PhoneHmmSet, PipelineError> {
        let key = Self::hmm_key(run);
        let config = run.config;
        let exp = run.exp;
        let background = run.background.clone();
        let model = self.cached(run, key, || {
            let inventory: Vec<String> = exp
                .corpus
                .iter()
                .filter_map(|u| u.transcript.as_ref())
                .flatten()
                .filter(|p| p.as_str() != SILENCE_LABEL)
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let feats = background
                .iter()
                .map(|u| Ok((feature_view(u, &config.align_stream)?, u.transcript()?)))
                .collect::<Result<Vec<_>, IoError>>()
                .map_err(stage("HMM training"))?;
            let utts: Vec<(&FeatureMatrix, &[String])> = feats.iter().map(|(f, t)| (f.as_ref(), *t)).collect();
            let trained = train_monophone_hmms(&utts, &inventory, &config.hmm).map_err(stage("HMM training"))?;
            Ok(Model::PhoneHmmSet(trained.hmm_set))
        })?;
        match model {
            Model::PhoneHmmSet(s) => Ok(s),
            other => Err(wrong_kind("HMM set", &other)),
        }
    }

    fn alignment_key(run: &Run<'_>, hmm_key: &str, utt_id: &str, transcript: &[String]) -> String {
        let c = run.config;
        format!(
            "{hmm_key}|{}|{}|{:?}|{utt_id}|{}",
            c.align.map(AlignAlgo::as_str).unwrap_or("-"),
            c.prune,
            c.hmm.silence,
            transcript.join(" ")
        )
    }

    /// Alignments of every `(utterance, transcript)` pair, computed in
    /// parallel and memoized across systems.
    fn align_all(
        &mut self,
        run: &Run<'_>,
        hmm_set: &PhoneHmmSet,
        align_feats: &Features<'_>,
        pairs: &[(&str, &[String])],
    ) -> Result<Vec<Arc<Alignment>>, PipelineError> {
        let hmm_key = Self::hmm_key(run);
        let algo = run.config.align.expect("validated: HMM systems carry an algorithm");
        let options = AlignOptions {
            prune: run.config.prune,
        };
        let keys: Vec<String> = pairs
            .iter()
            .map(|(u, t)| Self::alignment_key(run, &hmm_key, u, t))
            .collect();
        let mut seen = BTreeSet::new();
        let missing: Vec<usize> = (0..pairs.len())
            .filter(|&i| !self.alignments.contains_key(&keys[i]) && seen.insert(&keys[i]))
            .collect();
        let policy = run.config.hmm.silence;
        let computed = missing
            .par_iter()
            .map(|&i| {
                let (utt_id, transcript) = pairs[i];
                let feats = align_feats.get(utt_id).map_err(stage("alignment"))?;
                let graph = build_composite_graph(hmm_set, transcript, &policy).map_err(stage("alignment"))?;
                let a = align(&graph, hmm_set, feats, algo, &options).map_err(|e| PipelineError::Stage {
                    stage: "alignment",
                    source: format!("utterance `{utt_id}`: {e}").into(),
                })?;
                Ok((i, a))
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        for (i, a) in computed {
            self.alignments.insert(keys[i].clone(), Arc::new(a));
        }
        Ok(keys.iter().map(|k| Arc::clone(&self.alignments[k])).collect())
    }

    /// State GMMs in the speaker-feature space. With a single stream these
    /// are the HMM's own state GMMs; otherwise they are re-estimated from
    /// background alignments.
    fn state_models(
        &mut self,
        run: &mut Run<'_>,
        hmm_set: &PhoneHmmSet,
        align_feats: &Features<'_>,
        spk_feats: &Features<'_>,
    ) -> Result<StateModels, PipelineError> {
        if run.config.align_stream == run.config.speaker_stream {
            return Ok(hmm_set.state_models());
        }
        let pairs = background_pairs(run)?;
        let alignments = self.align_all(run, hmm_set, align_feats, &pairs)?;
        let key = StageCache::key(&[
            "state-models",
            &Self::hmm_key(run),
            &run.config.speaker_stream,
            run.config.align.map(AlignAlgo::as_str).unwrap_or("-"),
            &run.config.prune.to_string(),
        ]);
        let options = ReestimateOptions {
            variance_floor_ratio: run.config.hmm.variance_floor_ratio,
            ..ReestimateOptions::default()
        };
        let model = self.cached(run, key, || {
            let feats = pairs
                .iter()
                .map(|(u, _)| spk_feats.get(u))
                .collect::<Result<Vec<_>, IoError>>()
                .map_err(stage("state re-estimation"))?;
            let refs: Vec<&Alignment> = alignments.iter().map(|a| a.as_ref()).collect();
            let models =
                reestimate_state_gmms(hmm_set, &refs, &feats, &options).map_err(stage("state re-estimation"))?;
            Ok(Model::StateModels(models))
        })?;
        match model {
            Model::StateModels(m) => Ok(m),
            other => Err(wrong_kind("state models", &other)),
        }
    }

    fn gmm_ubm_scorer<'a>(&mut self, run: &mut Run<'a>) -> Result<GmmUbmScorer<'a>, PipelineError> {
        let ubm = self.ubm(run)?;
        let feats = Features::new(run.exp, &run.config.speaker_stream)?;
        let map = run.config.map;
        let models = run
            .exp
            .enrollments
            .par_iter()
            .map(|e| {
                let mut stats = GmmStats::for_model(&ubm);
                for u in &e.utt_ids {
                    let x = feats.get(u).map_err(stage("enrollment"))?;
                    stats += &accumulate_stats(&ubm, x).map_err(stage("enrollment"))?;
                }
                let adapted = map_adapt(&ubm, &stats, &map).map_err(stage("enrollment"))?;
                Ok((e.model_id.clone(), adapted))
            })
            .collect::<Result<HashMap<_, _>, PipelineError>>()?;
        Ok(GmmUbmScorer { ubm, models, feats })
    }

    /// Identity of the statistics layout and background data a T matrix
    /// is trained on.
    fn prior_key(run: &Run<'_>) -> String {
        let c = run.config;
        if !c.kind.uses_hmm() {
            return Self::ubm_key(run);
        }
        StageCache::key(&[
            "hmm-prior",
            &Self::hmm_key(run),
            &c.speaker_stream,
            c.align.map(AlignAlgo::as_str).unwrap_or("-"),
            &c.prune.to_string(),
            &c.exclude_silence.to_string(),
        ])
    }

    fn tmatrix_key(run: &Run<'_>) -> String {
        let c = run.config;
        StageCache::key(&[
            "tmatrix",
            &Self::prior_key(run),
            &c.rank.to_string(),
            &c.tmatrix_iterations.to_string(),
            &c.seed.to_string(),
        ])
    }

    fn tmatrix(
        &mut self,
        run: &mut Run<'_>,
        init: impl FnOnce() -> Result<TotalVariability, IvectorError>,
        stats: &[GmmStats],
    ) -> Result<TotalVariability, PipelineError> {
        let key = Self::tmatrix_key(run);
        let iterations = run.config.tmatrix_iterations;
        let model = self.cached(run, key, || {
            let init = init().map_err(stage("T-matrix training"))?;
            let trained = train_tmatrix(init, stats, iterations).map_err(stage("T-matrix training"))?;
            Ok(Model::TotalVariability(trained.tv))
        })?;
        match model {
            Model::TotalVariability(tv) => Ok(tv),
            other => Err(wrong_kind("T matrix", &other)),
        }
    }

    fn gmm_tv<'a>(&mut self, run: &mut Run<'a>) -> Result<(Gmm, Features<'a>, TotalVariability), PipelineError> {
        let ubm = self.ubm(run)?;
        let feats = Features::new(run.exp, &run.config.speaker_stream)?;
        let bg_stats = run
            .background
            .par_iter()
            .map(|u| gmm_stats(&ubm, &feats, &u.utt_id))
            .collect::<Result<Vec<_>, _>>()?;
        let (rank, seed) = (run.config.rank, run.config.seed);
        let tv = self.tmatrix(
            run,
            || TotalVariability::initialize_for_gmm(&ubm, rank, seed),
            &bg_stats,
        )?;
        Ok((ubm, feats, tv))
    }

    fn ivector_scorer<'a>(&mut self, run: &mut Run<'a>) -> Result<IvectorScorer, PipelineError> {
        let (ubm, feats, tv) = self.gmm_tv(run)?;
        let mode = run.config.enroll_mode;
        let models = run
            .exp
            .enrollments
            .par_iter()
            .map(|e| {
                let stats = e
                    .utt_ids
                    .iter()
                    .map(|u| gmm_stats(&ubm, &feats, u))
                    .collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&GmmStats> = stats.iter().collect();
                let w = enroll_ivector(&tv, &refs, mode).map_err(stage("enrollment"))?.w;
                Ok((e.model_id.clone(), w))
            })
            .collect::<Result<HashMap<_, _>, PipelineError>>()?;
        let tests: BTreeSet<&str> = run.exp.trials.iter().map(|t| t.test_utt_id.as_str()).collect();
        let tests = tests
            .into_par_iter()
            .filter(|u| run.exp.corpus.get(u).is_some())
            .map(|u| {
                let w = extract_ivector(&tv, &gmm_stats(&ubm, &feats, u)?)
                    .map_err(stage("extraction"))?
                    .w;
                Ok(((String::new(), u.to_string()), w))
            })
            .collect::<Result<HashMap<_, _>, PipelineError>>()?;
        let utts = tests.keys().map(|(_, u)| u.clone()).collect();
        Ok(IvectorScorer {
            models,
            tests,
            phrase_of: None,
            utts,
        })
    }

    /// Everything the HMM systems share: the HMM set, speaker-space state
    /// models, features and the alignments of enrollment and test pairs.
    fn hmm_common<'a>(&mut self, run: &mut Run<'a>) -> Result<HmmCommon<'a>, PipelineError> {
        let mut common = self.hmm_models(run)?;
        let enroll_pairs: Vec<(&str, &[String])> = run
            .exp
            .enrollments
            .iter()
            .flat_map(|e| e.utt_ids.iter())
            .map(|u| {
                let utt = run.exp.corpus.require(u).map_err(stage("enrollment"))?;
                Ok((utt.utt_id.as_str(), utt.transcript().map_err(stage("enrollment"))?))
            })
            .collect::<Result<_, PipelineError>>()?;
        let enroll_alignments = self.align_all(run, &common.hmm_set, &common.align_feats, &enroll_pairs)?;
        let enroll: HashMap<String, Arc<Alignment>> = enroll_pairs
            .iter()
            .zip(enroll_alignments)
            .map(|((u, _), a)| (u.to_string(), a))
            .collect();

        // Test utterances are aligned against the claimed model's phrase.
        let test_pairs: Vec<(&str, &[String])> = run
            .exp
            .trials
            .iter()
            .filter(|t| run.exp.corpus.get(&t.test_utt_id).is_some())
            .filter_map(|t| {
                run.model_transcripts
                    .get(t.model_id.as_str())
                    .map(|tr| (t.test_utt_id.as_str(), *tr))
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let test_alignments = self.align_all(run, &common.hmm_set, &common.align_feats, &test_pairs)?;
        let tests: HashMap<(String, String), Arc<Alignment>> = test_pairs
            .iter()
            .zip(test_alignments)
            .map(|((u, tr), a)| ((tr.join(" "), u.to_string()), a))
            .collect();
        common.enroll = enroll;
        common.tests = tests;
        Ok(common)
    }

    /// HMM set, features and speaker-space state models, without any
    /// enrollment or test alignments.
    fn hmm_models<'a>(&mut self, run: &mut Run<'a>) -> Result<HmmCommon<'a>, PipelineError> {
        let hmm_set = self.hmm_set(run)?;
        let align_feats = Features::new(run.exp, &run.config.align_stream)?;
        let spk_feats = Features::new(run.exp, &run.config.speaker_stream)?;
        let models = self.state_models(run, &hmm_set, &align_feats, &spk_feats)?;
        Ok(HmmCommon {
            hmm_set,
            models,
            align_feats,
            spk_feats,
            enroll: HashMap::new(),
            tests: HashMap::new(),
        })
    }

    fn gmm_hmm_scorer<'a>(&mut self, run: &mut Run<'a>) -> Result<GmmHmmScorer<'a>, PipelineError> {
        let common = self.hmm_common(run)?;
        let exclude = run.config.exclude_silence;
        let map = run.config.map;
        let adapted = run
            .exp
            .enrollments
            .par_iter()
            .map(|e| {
                let mut stats = GmmStats::zeros(common.models.num_slots(), common.models.dim());
                for u in &e.utt_ids {
                    let x = common.spk_feats.get(u).map_err(stage("enrollment"))?;
                    stats += &accumulate_hmm_stats(&common.enroll[u], x, &common.models, exclude)
                        .map_err(stage("enrollment"))?;
                }
                let m = hmm_map_adapt(&common.models, &stats, &map).map_err(stage("enrollment"))?;
                Ok((e.model_id.clone(), m))
            })
            .collect::<Result<HashMap<_, _>, PipelineError>>()?;
        let phrase_of = run
            .model_transcripts
            .iter()
            .map(|(m, t)| (m.to_string(), t.join(" ")))
            .collect();
        Ok(GmmHmmScorer {
            algo: run.config.align.expect("validated"),
            exclude,
            adapted,
            phrase_of,
            common,
        })
    }

    fn hmm_tv(&mut self, run: &mut Run<'_>, common: &HmmCommon<'_>) -> Result<TotalVariability, PipelineError> {
        let exclude = run.config.exclude_silence;
        let bg_pairs = background_pairs(run)?;
        let bg_alignments = self.align_all(run, &common.hmm_set, &common.align_feats, &bg_pairs)?;
        let bg_stats = bg_pairs
            .par_iter()
            .zip(&bg_alignments)
            .map(|((u, _), a)| hmm_stats(common, a, u, exclude))
            .collect::<Result<Vec<_>, _>>()?;
        let (rank, seed) = (run.config.rank, run.config.seed);
        let models = &common.models;
        self.tmatrix(
            run,
            || TotalVariability::initialize_for_states(models, rank, seed),
            &bg_stats,
        )
    }

    fn ivector_hmm_scorer<'a>(&mut self, run: &mut Run<'a>) -> Result<IvectorScorer, PipelineError> {
        let common = self.hmm_common(run)?;
        let tv = self.hmm_tv(run, &common)?;
        let exclude = run.config.exclude_silence;
        let mode = run.config.enroll_mode;
        let enrolled = run
            .exp
            .enrollments
            .par_iter()
            .map(|e| {
                let stats = e
                    .utt_ids
                    .iter()
                    .map(|u| hmm_stats(&common, &common.enroll[u], u, exclude))
                    .collect::<Result<Vec<_>, _>>()?;
                let refs: Vec<&GmmStats> = stats.iter().collect();
                let w = enroll_ivector(&tv, &refs, mode).map_err(stage("enrollment"))?.w;
                Ok((e.model_id.clone(), w))
            })
            .collect::<Result<HashMap<_, _>, PipelineError>>()?;
        let tests = common
            .tests
            .par_iter()
            .map(|((phrase, utt), a)| {
                let w = extract_ivector(&tv, &hmm_stats(&common, a, utt, exclude)?)
                    .map_err(stage("extraction"))?
                    .w;
                Ok(((phrase.clone(), utt.clone()), w))
            })
            .collect::<Result<HashMap<_, _>, PipelineError>>()?;
        let phrase_of = run
            .model_transcripts
            .iter()
            .map(|(m, t)| (m.to_string(), t.join(" ")))
            .collect();
        let utts = tests.keys().map(|(_, u)| u.clone()).collect();
        Ok(IvectorScorer {
            models: enrolled,
            tests,
            phrase_of: Some(phrase_of),
            utts,
        })
    }

    /// Makes `model` the background model the stage cache returns for
    /// `config` on `exp`, in place of training one. The model kind picks the
    /// stage: a GMM is the UBM, a phone HMM set the HMMs, a total
    /// variability model the T matrix.
    pub fn preload(&mut self, config: &SystemConfig, exp: &Experiment, model: Model) -> Result<(), PipelineError> {
        let digest = exp.corpus.digest();
        let run = Self::start(config, exp, &digest)?;
        let key = match &model {
            Model::Gmm(_) => Self::ubm_key(&run),
            Model::PhoneHmmSet(_) => Self::hmm_key(&run),
            Model::TotalVariability(_) if config.kind.uses_ivectors() => Self::tmatrix_key(&run),
            other => {
                return Err(PipelineError::Config(format!(
                    "a {} cannot stand in for a background model of {}",
                    other.kind_name(),
                    config.name()
                )))
            }
        };
        self.cache.insert(key, model);
        Ok(())
    }

    /// T matrix of an i-vector system, over UBM components or HMM
    /// state-mixture slots depending on the kind.
    pub fn train_tmatrix(
        &mut self,
        config: &SystemConfig,
        exp: &Experiment,
    ) -> Result<TotalVariability, PipelineError> {
        if !config.kind.uses_ivectors() {
            return Err(PipelineError::Config(format!("{} has no T matrix", config.name())));
        }
        let digest = exp.corpus.digest();
        let mut run = Self::start(config, exp, &digest)?;
        if config.kind.uses_hmm() {
            let common = self.hmm_models(&mut run)?;
            self.hmm_tv(&mut run, &common)
        } else {
            Ok(self.gmm_tv(&mut run)?.2)
        }
    }

    /// Enrolled speaker models, sorted by model id: adapted GMMs, adapted
    /// state models or i-vectors depending on the system kind.
    pub fn enroll(&mut self, config: &SystemConfig, exp: &Experiment) -> Result<Model, PipelineError> {
        let digest = exp.corpus.digest();
        let mut run = Self::start(config, exp, &digest)?;
        fn sorted<T>(m: HashMap<String, T>) -> Vec<(String, T)> {
            let mut v: Vec<_> = m.into_iter().collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        }
        Ok(match config.kind {
            SystemKind::GmmUbm => Model::SpeakerGmms(sorted(self.gmm_ubm_scorer(&mut run)?.models)),
            SystemKind::GmmHmm => Model::SpeakerStateModels(sorted(self.gmm_hmm_scorer(&mut run)?.adapted)),
            SystemKind::Ivector => Model::Ivectors(sorted(self.ivector_scorer(&mut run)?.models)),
            SystemKind::IvectorHmm => Model::Ivectors(sorted(self.ivector_hmm_scorer(&mut run)?.models)),
        })
    }

    /// Aligns one utterance against `transcript` (its own when `None`) with
    /// the configuration's HMMs and algorithm.
    pub fn align_utterance(
        &mut self,
        config: &SystemConfig,
        exp: &Experiment,
        utt_id: &str,
        transcript: Option<&[String]>,
    ) -> Result<(Arc<Alignment>, PhoneHmmSet), PipelineError> {
        if !config.kind.uses_hmm() {
            return Err(PipelineError::Config(format!("{} does not align", config.name())));
        }
        let digest = exp.corpus.digest();
        let mut run = Self::start(config, exp, &digest)?;
        let utt = exp.corpus.require(utt_id).map_err(stage("alignment"))?;
        let transcript = match transcript {
            Some(t) => t,
            None => utt.transcript().map_err(stage("alignment"))?,
        };
        let hmm_set = self.hmm_set(&mut run)?;
        let feats = Features::new(exp, &config.align_stream)?;
        let mut out = self.align_all(&run, &hmm_set, &feats, &[(utt_id, transcript)])?;
        Ok((out.remove(0), hmm_set))
    }
}

fn gmm_stats(ubm: &Gmm, feats: &Features<'_>, utt: &str) -> Result<GmmStats, PipelineError> {
    let x = feats.get(utt).map_err(stage("statistics"))?;
    accumulate_stats(ubm, x).map_err(stage("statistics"))
}

fn hmm_stats(common: &HmmCommon<'_>, a: &Alignment, utt: &str, exclude: bool) -> Result<GmmStats, PipelineError> {
    let x = common.spk_feats.get(utt).map_err(stage("statistics"))?;
    accumulate_hmm_stats(a, x, &common.models, exclude).map_err(stage("statistics"))
}

fn background_pairs<'a>(run: &Run<'a>) -> Result<Vec<(&'a str, &'a [String])>, PipelineError> {
    run.background
        .iter()
        .map(|u| Ok((u.utt_id.as_str(), u.transcript().map_err(stage("background"))?)))
        .collect()
}

fn wrong_kind(what: &str, model: &Model) -> PipelineError {
    PipelineError::Stage {
        stage: "stage cache",
        source: format!("expected a {what}, found a {}", model.kind_name()).into(),
    }
}

struct GmmUbmScorer<'a> {
    ubm: Gmm,
    models: HashMap<String, Gmm>,
    feats: Features<'a>,
}

impl Scorer for GmmUbmScorer<'_> {
    fn has_model(&self, model_id: &str) -> bool {
        self.models.contains_key(model_id)
    }

    fn has_utterance(&self, utt_id: &str) -> bool {
        self.feats.exp.corpus.get(utt_id).is_some()
    }

    fn score(&self, model_id: &str, utt_id: &str) -> Result<f64, String> {
        let x = self.feats.get(utt_id).map_err(|e| e.to_string())?;
        score_gmm_ubm(&self.models[model_id], &self.ubm, x).map_err(|e| e.to_string())
    }
}

struct HmmCommon<'a> {
    hmm_set: PhoneHmmSet,
    models: StateModels,
    align_feats: Features<'a>,
    spk_feats: Features<'a>,
    enroll: HashMap<String, Arc<Alignment>>,
    /// Keyed by `(claimed phrase transcript, utterance)`.
    tests: HashMap<(String, String), Arc<Alignment>>,
}

struct GmmHmmScorer<'a> {
    algo: AlignAlgo,
    exclude: bool,
    adapted: HashMap<String, StateModels>,
    phrase_of: HashMap<String, String>,
    common: HmmCommon<'a>,
}

impl Scorer for GmmHmmScorer<'_> {
    fn has_model(&self, model_id: &str) -> bool {
        self.adapted.contains_key(model_id)
    }

    fn has_utterance(&self, utt_id: &str) -> bool {
        self.common.spk_feats.exp.corpus.get(utt_id).is_some()
    }

    fn score(&self, model_id: &str, utt_id: &str) -> Result<f64, String> {
        let phrase = &self.phrase_of[model_id];
        let a = &self.common.tests[&(phrase.clone(), utt_id.to_string())];
        let x = self.common.spk_feats.get(utt_id).map_err(|e| e.to_string())?;
        let adapted = &self.adapted[model_id];
        match self.algo {
            AlignAlgo::Viterbi => score_hmm_viterbi(adapted, &self.common.models, a, x, self.exclude),
            AlignAlgo::ForwardBackward => score_hmm_fb(adapted, &self.common.models, a, x, self.exclude),
        }
        .map_err(|e| e.to_string())
    }
}

/// Cosine scoring of enrollment against test i-vectors. A model whose
/// i-vector is zero sits exactly at the background supervector and scores
/// 0 against everything.
struct IvectorScorer {
    models: HashMap<String, Vec<f64>>,
    /// Keyed by `(claimed phrase, utterance)`; the phrase is empty for
    /// alignment-free systems.
    tests: HashMap<(String, String), Vec<f64>>,
    phrase_of: Option<HashMap<String, String>>,
    utts: BTreeSet<String>,
}

impl IvectorScorer {
    fn test_key(&self, model_id: &str, utt_id: &str) -> (String, String) {
        let phrase = self
            .phrase_of
            .as_ref()
            .and_then(|p| p.get(model_id).cloned())
            .unwrap_or_default();
        (phrase, utt_id.to_string())
    }
}

impl Scorer for IvectorScorer {
    fn has_model(&self, model_id: &str) -> bool {
        self.models.contains_key(model_id)
    }

    fn has_utterance(&self, utt_id: &str) -> bool {
        self.utts.contains(utt_id)
    }

    fn score(&self, model_id: &str, utt_id: &str) -> Result<f64, String> {
        let w_model = &self.models[model_id];
        let w_test = self
            .tests
            .get(&self.test_key(model_id, utt_id))
            .ok_or_else(|| format!("no test i-vector for `{utt_id}`"))?;
        trial_score(w_model, w_test).map_err(|e| e.to_string())
    }
}
