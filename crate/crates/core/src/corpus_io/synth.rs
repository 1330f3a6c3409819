//! Deterministic synthetic corpora for desk-scale experiments.
//!
//! Every frame is drawn directly in feature space from a Gaussian whose mean
//! is a global phone-state mean plus speaker offsets (one per speaker and one
//! per speaker × phone-state) plus a per-utterance session offset. Utterances
//! start and end with three-state silence. Randomness comes from ChaCha8
//! (`rand_chacha`), a portable, seedable 64-bit-seeded generator; each
//! purpose draws from its own ChaCha stream so that, for example, adding
//! background speakers leaves the evaluation speakers unchanged.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::corpus::{Corpus, Enrollment, Experiment, Utterance, DEFAULT_STREAM};
use super::trials::{Trial, TrialType};
use super::IoError;
use crate::features::{FeatureKind, FeatureMatrix};
use crate::hmm::{SILENCE_LABEL, STATES_PER_PHONE};

/// Stream holding the speaker-independent "bottleneck" features.
pub const BOTTLENECK_STREAM: &str = "bn";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub num_phrases: usize,
    pub phones_per_phrase: usize,
    pub utterances_per_cell: usize,
    pub seed: u64,
    /// Std of per-(speaker, phone, state) mean offsets.
    pub speaker_shift: f64,
    /// Number of latent speaker factors behind those offsets; 0 draws every
    /// offset independently. With `k > 0` each offset is `V_(phone,state) y`
    /// for a speaker vector `y ~ N(0, I_k)` and loadings shared by all
    /// speakers, scaled to the same per-coordinate std.
    pub speaker_rank: usize,
    /// Std of the per-speaker offset shared by all speech states.
    pub speaker_global_shift: f64,
    /// Std of the per-utterance offset shared by all frames.
    pub session_shift: f64,
    /// Std of frame noise around the state mean.
    pub noise: f64,
    /// Phone inventory size, silence excluded.
    pub num_phones: usize,
    pub dim: usize,
    /// Std of the global phone-state means.
    pub phone_spread: f64,
    pub min_state_frames: usize,
    pub max_state_frames: usize,
    pub background_speakers: usize,
    pub background_utterances: usize,
    pub enroll_per_model: usize,
    /// Dimension of the optional speaker-independent `bn` stream (0 = none).
    pub bottleneck_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_speakers: 4,
            num_phrases: 2,
            phones_per_phrase: 3,
            utterances_per_cell: 5,
            seed: 7,
            speaker_shift: 0.35,
            speaker_rank: 0,
            speaker_global_shift: 0.0,
            session_shift: 0.2,
            noise: 1.0,
            num_phones: 6,
            dim: 12,
            phone_spread: 1.5,
            min_state_frames: 3,
            max_state_frames: 6,
            background_speakers: 0,
            background_utterances: 0,
            enroll_per_model: 3,
            bottleneck_dim: 0,
        }
    }
}

impl SyntheticSpec {
    /// The corpus the trend experiments run on.
    pub fn bundled() -> Self {
        Self {
            num_speakers: 10,
            num_phrases: 4,
            phones_per_phrase: 5,
            utterances_per_cell: 8,
            seed: 2017,
            num_phones: 8,
            background_speakers: 30,
            background_utterances: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let counts = [
            ("num_speakers", self.num_speakers),
            ("num_phrases", self.num_phrases),
            ("phones_per_phrase", self.phones_per_phrase),
            ("utterances_per_cell", self.utterances_per_cell),
            ("num_phones", self.num_phones),
            ("dim", self.dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(IoError::InvalidSpec(format!("{name} must be at least 1")));
            }
        }
        if self.min_state_frames < 3 || self.max_state_frames < self.min_state_frames {
            return Err(IoError::InvalidSpec(
                "state durations need 3 <= min_state_frames <= max_state_frames".into(),
            ));
        }
        let scales = [
            self.speaker_shift,
            self.speaker_global_shift,
            self.session_shift,
            self.noise,
            self.phone_spread,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(IoError::InvalidSpec("scales must be finite and non-negative".into()));
        }
        if self.background_speakers > 0 && self.background_utterances == 0 {
            return Err(IoError::InvalidSpec(
                "background speakers need background_utterances >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn phone_inventory(&self) -> Vec<String> {
        (0..self.num_phones).map(|p| format!("p{p:02}")).collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_PHONES: u64 = 1;
const STREAM_PHRASES: u64 = 2;
const STREAM_LOADINGS: u64 = 3;
const STREAM_EVAL_SPEAKERS: u64 = 1 << 20;
const STREAM_BG_SPEAKERS: u64 = 2 << 20;

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

struct World<'a> {
    spec: &'a SyntheticSpec,
    /// `[phone][state]` means; the silence phone is last.
    state_means: Vec<Vec<Vec<f64>>>,
    bn_projection: Vec<Vec<f64>>,
    /// `[phone][state]` loadings, `dim × speaker_rank` row-major.
    loadings: Vec<Vec<Vec<f64>>>,
}

struct Speaker {
    id: String,
    global: Vec<f64>,
    offsets: Vec<Vec<Vec<f64>>>,
}

impl<'a> World<'a> {
    fn new(spec: &'a SyntheticSpec) -> Self {
        let mut rng = stream_rng(spec.seed, STREAM_PHONES);
        let state_means = (0..=spec.num_phones)
            .map(|_| {
                (0..STATES_PER_PHONE)
                    .map(|_| gaussian_vec(&mut rng, spec.dim, spec.phone_spread))
                    .collect()
            })
            .collect();
        let bn_projection = (0..spec.bottleneck_dim)
            .map(|_| gaussian_vec(&mut rng, spec.dim, 1.0 / (spec.dim as f64).sqrt()))
            .collect();
        let k = spec.speaker_rank;
        let loadings = if k == 0 {
            Vec::new()
        } else {
            let mut rng = stream_rng(spec.seed, STREAM_LOADINGS);
            let scale = spec.speaker_shift / (k as f64).sqrt();
            (0..spec.num_phones)
                .map(|_| {
                    (0..STATES_PER_PHONE)
                        .map(|_| gaussian_vec(&mut rng, spec.dim * k, scale))
                        .collect()
                })
                .collect()
        };
        Self {
            spec,
            state_means,
            bn_projection,
            loadings,
        }
    }

    fn speaker(&self, id: String, rng: &mut ChaCha8Rng) -> Speaker {
        let s = self.spec;
        let global = gaussian_vec(rng, s.dim, s.speaker_global_shift);
        let offsets = if s.speaker_rank == 0 {
            (0..s.num_phones)
                .map(|_| {
                    (0..STATES_PER_PHONE)
                        .map(|_| gaussian_vec(rng, s.dim, s.speaker_shift))
                        .collect()
                })
                .collect()
        } else {
            let y = gaussian_vec(rng, s.speaker_rank, 1.0);
            self.loadings
                .iter()
                .map(|phone| {
                    phone
                        .iter()
                        .map(|v| {
                            v.chunks_exact(s.speaker_rank)
                                .map(|row| row.iter().zip(&y).map(|(a, b)| a * b).sum())
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        Speaker { id, global, offsets }
    }

    fn utterance(
        &self,
        utt_id: String,
        speaker: &Speaker,
        phrase_id: String,
        phones: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Utterance, IoError> {
        let s = self.spec;
        let silence = s.num_phones;
        let session = gaussian_vec(rng, s.dim, s.session_shift);
        let mut sequence = vec![silence];
        sequence.extend_from_slice(phones);
        sequence.push(silence);

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut bn_rows: Vec<Vec<f64>> = Vec::new();
        for &phone in &sequence {
            for state in 0..STATES_PER_PHONE {
                let duration = rng.random_range(s.min_state_frames..=s.max_state_frames);
                let mean = &self.state_means[phone][state];
                for _ in 0..duration {
                    let frame: Vec<f64> = (0..s.dim)
                        .map(|d| {
                            let mut v = mean[d] + session[d];
                            if phone != silence {
                                v += speaker.global[d] + speaker.offsets[phone][state][d];
                            }
                            v + s.noise * rng.sample::<f64, _>(StandardNormal)
                        })
                        .collect();
                    rows.push(frame);
                    if s.bottleneck_dim > 0 {
                        bn_rows.push(
                            self.bn_projection
                                .iter()
                                .map(|p| {
                                    let clean: f64 = p.iter().zip(mean).map(|(a, b)| a * b).sum();
                                    clean + 0.3 * rng.sample::<f64, _>(StandardNormal)
                                })
                                .collect(),
                        );
                    }
                }
            }
        }
        let mut streams = BTreeMap::new();
        streams.insert(
            DEFAULT_STREAM.to_string(),
            FeatureMatrix::from_rows(&rows, FeatureKind::External)?.round_to_f32(),
        );
        if s.bottleneck_dim > 0 {
            streams.insert(
                BOTTLENECK_STREAM.to_string(),
                FeatureMatrix::from_rows(&bn_rows, FeatureKind::External)?.round_to_f32(),
            );
        }
        let inventory = s.phone_inventory();
        Ok(Utterance {
            utt_id,
            speaker_id: speaker.id.clone(),
            phrase_id,
            transcript: Some(phones.iter().map(|&p| inventory[p].clone()).collect()),
            streams,
        })
    }
}

fn draw_phrase(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..spec.num_phones).collect();
    if spec.phones_per_phrase <= spec.num_phones {
        pool.shuffle(rng);
        pool.truncate(spec.phones_per_phrase);
        pool
    } else {
        (0..spec.phones_per_phrase)
            .map(|_| rng.random_range(0..spec.num_phones))
            .collect()
    }
}

fn draw_phrases(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(spec.seed, STREAM_PHRASES);
    let mut phrases: Vec<Vec<usize>> = Vec::with_capacity(spec.num_phrases);
    let mut attempts = 0;
    while phrases.len() < spec.num_phrases {
        let p = draw_phrase(spec, &mut rng);
        attempts += 1;
        // Tiny inventories may not admit enough distinct phrases.
        if !phrases.contains(&p) || attempts > 1000 {
            phrases.push(p);
        }
    }
    phrases
}

pub fn speaker_id(index: usize) -> String {
    format!("spk{index:03}")
}

pub fn phrase_id(index: usize) -> String {
    format!("ph{index:02}")
}

pub fn model_id(speaker: usize, phrase: usize) -> String {
    format!("{}_{}", speaker_id(speaker), phrase_id(phrase))
}

/// Generates the evaluation utterances (`num_speakers × num_phrases ×
/// utterances_per_cell`) followed by the background utterances.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Corpus, IoError> {
    spec.validate()?;
    let world = World::new(spec);
    let phrases = draw_phrases(spec);
    let mut utterances = Vec::new();
    for s in 0..spec.num_speakers {
        let mut rng = stream_rng(spec.seed, STREAM_EVAL_SPEAKERS + s as u64);
        let speaker = world.speaker(speaker_id(s), &mut rng);
        for (p, phones) in phrases.iter().enumerate() {
            for k in 0..spec.utterances_per_cell {
                let id = format!("{}_{:02}", model_id(s, p), k);
                utterances.push(world.utterance(id, &speaker, phrase_id(p), phones, &mut rng)?);
            }
        }
    }
    for b in 0..spec.background_speakers {
        let mut rng = stream_rng(spec.seed, STREAM_BG_SPEAKERS + b as u64);
        let speaker = world.speaker(format!("bg{b:03}"), &mut rng);
        for k in 0..spec.background_utterances {
            let phones = if b == 0 && k == 0 {
                // Guarantees every phone appears in the background transcripts.
                (0..spec.num_phones).collect()
            } else {
                draw_phrase(spec, &mut rng)
            };
            let id = format!("{}_u{:02}", speaker.id, k);
            utterances.push(world.utterance(id, &speaker, "free".into(), &phones, &mut rng)?);
        }
    }
    Corpus::new(utterances)
}

/// Corpus plus protocol: one model per evaluation (speaker, phrase) cell
/// enrolled on its first `enroll_per_model` utterances; every remaining
/// evaluation utterance is tested against every model, giving TC, IC, TW
/// and IW trials. Background speakers form the training subset (or the
/// evaluation corpus itself when there are none).
pub fn generate_synthetic_experiment(spec: &SyntheticSpec) -> Result<Experiment, IoError> {
    if spec.enroll_per_model == 0 || spec.enroll_per_model >= spec.utterances_per_cell {
        return Err(IoError::InvalidSpec(
            "need 1 <= enroll_per_model < utterances_per_cell".into(),
        ));
    }
    let corpus = generate_synthetic_corpus(spec)?;
    let eval_count = spec.num_speakers * spec.num_phrases * spec.utterances_per_cell;
    let background: Vec<String> = if spec.background_speakers > 0 {
        corpus.utterances()[eval_count..]
            .iter()
            .map(|u| u.utt_id.clone())
            .collect()
    } else {
        corpus.utterances()[..eval_count]
            .iter()
            .map(|u| u.utt_id.clone())
            .collect()
    };
    let cell = |s: usize, p: usize, k: usize| format!("{}_{:02}", model_id(s, p), k);
    let mut enrollments = Vec::new();
    for s in 0..spec.num_speakers {
        for p in 0..spec.num_phrases {
            enrollments.push(Enrollment {
                model_id: model_id(s, p),
                utt_ids: (0..spec.enroll_per_model).map(|k| cell(s, p, k)).collect(),
            });
        }
    }
    let mut trials = Vec::new();
    for ms in 0..spec.num_speakers {
        for mp in 0..spec.num_phrases {
            for ts in 0..spec.num_speakers {
                for tp in 0..spec.num_phrases {
                    for k in spec.enroll_per_model..spec.utterances_per_cell {
                        trials.push(Trial::new(
                            model_id(ms, mp),
                            cell(ts, tp, k),
                            TrialType::classify(ms == ts, mp == tp),
                        ));
                    }
                }
            }
        }
    }
    Ok(Experiment {
        corpus,
        background,
        enrollments,
        trials,
    })
}

/// Label of the silence phone used in synthetic transcripts' HMM sets.
pub fn silence_label() -> &'static str {
    SILENCE_LABEL
}
