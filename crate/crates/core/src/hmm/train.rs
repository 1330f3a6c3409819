use std::collections::HashSet;

use log::{debug, warn};
use rayon::prelude::*;

use super::align::{align, AlignAlgo, AlignOptions, Alignment};
use super::graph::{build_composite_graph, SilencePolicy};
use super::model::{PhoneHmm, PhoneHmmSet, SILENCE_LABEL, STATES_PER_PHONE};
use super::HmmError;
use crate::features::FeatureMatrix;
use crate::gmm::{global_moments, reseed, split_heaviest, Gmm, MomentAcc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmTrainConfig {
    /// Mixtures per speech state (`G`).
    pub mixtures: usize,
    /// Mixtures per silence state (`G_sil`).
    pub silence_mixtures: usize,
    /// Viterbi re-estimation rounds on single Gaussians after the flat start.
    pub initial_rounds: usize,
    /// Re-estimation rounds after every mixture split.
    pub rounds_per_split: usize,
    pub silence: SilencePolicy,
    pub variance_floor_ratio: f64,
    pub split_offset: f64,
    pub min_self_loop: f64,
    pub max_self_loop: f64,
}

impl Default for HmmTrainConfig {
    fn default() -> Self {
        Self {
            mixtures: 8,
            silence_mixtures: 16,
            initial_rounds: 4,
            rounds_per_split: 4,
            silence: SilencePolicy::default(),
            variance_floor_ratio: 1e-3,
            split_offset: 0.1,
            min_self_loop: 0.01,
            max_self_loop: 0.99,
        }
    }
}

impl HmmTrainConfig {
    pub fn validate(&self) -> Result<(), HmmError> {
        if self.mixtures == 0 || self.silence_mixtures == 0 {
            return Err(HmmError::InvalidConfig("mixture counts must be at least 1".into()));
        }
        if !(0.0 < self.min_self_loop && self.min_self_loop <= self.max_self_loop && self.max_self_loop < 1.0) {
            return Err(HmmError::InvalidConfig(
                "self-loop bounds must satisfy 0 < min <= max < 1".into(),
            ));
        }
        if !(self.variance_floor_ratio > 0.0) || !(self.split_offset > 0.0) {
            return Err(HmmError::InvalidConfig(
                "variance floor ratio and split offset must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A trained phone set and its training objective history: per stage, the
/// average per-frame best-path log-probability after the flat start or
/// split and after every re-estimation round.
#[derive(Debug, Clone)]
pub struct HmmTraining {
    pub hmm_set: PhoneHmmSet,
    pub history: Vec<Vec<f64>>,
}

/// Frame-to-state assignment splitting `frames` equally over `states`,
/// remainder to the last state.
pub fn flat_start_segmentation(frames: usize, states: usize) -> Result<Vec<usize>, HmmError> {
    if states == 0 || frames < states {
        return Err(HmmError::InsufficientFrames { frames, needed: states });
    }
    let base = frames / states;
    Ok((0..frames).map(|t| (t / base).min(states - 1)).collect())
}

/// One training utterance: alignment features and phone transcript.
pub type TrainingUtterance<'a> = (&'a FeatureMatrix, &'a [String]);

struct Trainer<'a> {
    utts: &'a [TrainingUtterance<'a>],
    config: HmmTrainConfig,
    floor: Vec<f64>,
    dim: usize,
}

#[derive(Default)]
struct TransitionCounts {
    stay: Vec<f64>,
    leave: Vec<f64>,
}

impl Trainer<'_> {
    fn align_all(&self, set: &PhoneHmmSet) -> Result<Vec<Alignment>, HmmError> {
        self.utts
            .par_iter()
            .map(|(x, tr)| {
                let graph = build_composite_graph(set, tr, &self.config.silence)?;
                align(&graph, set, x, AlignAlgo::Viterbi, &AlignOptions::exact())
            })
            .collect()
    }

    fn objective(&self, alignments: &[Alignment]) -> f64 {
        let frames: usize = alignments.iter().map(Alignment::num_frames).sum();
        alignments.iter().map(|a| a.log_likelihood).sum::<f64>() / frames as f64
    }

    /// One Viterbi-style re-estimation: hard states from the best path, soft
    /// mixture posteriors within each state. Returns the new set and whether
    /// any component had to be reseeded.
    fn reestimate(&self, set: &PhoneHmmSet, alignments: &[Alignment]) -> (PhoneHmmSet, bool) {
        let n_states = set.num_states();
        let mut accs: Vec<MomentAcc> = (0..n_states)
            .map(|s| MomentAcc::new(set.state_gmm(s).num_components(), self.dim))
            .collect();
        let mut counts = TransitionCounts {
            stay: vec![0.0; n_states],
            leave: vec![0.0; n_states],
        };
        for ((x, _), a) in self.utts.iter().zip(alignments) {
            let path = a.path.as_ref().expect("viterbi alignment has a path");
            for t in 0..a.num_frames() {
                let sid = a.state_ids[path[t]];
                let mut post = vec![0.0; set.state_gmm(sid).num_components()];
                for o in a.frame(t) {
                    post[o.mixture] += o.posterior;
                }
                accs[sid].add(set.state_gmm(sid), x.row(t), &post);
                if t + 1 < path.len() {
                    if path[t + 1] == path[t] {
                        counts.stay[sid] += 1.0;
                    } else {
                        counts.leave[sid] += 1.0;
                    }
                }
            }
        }
        self.rebuild(set, &accs, &counts)
    }

    fn rebuild(&self, set: &PhoneHmmSet, accs: &[MomentAcc], counts: &TransitionCounts) -> (PhoneHmmSet, bool) {
        let mut reseeded = false;
        let phones = set
            .phones()
            .iter()
            .enumerate()
            .map(|(p, phone)| {
                let mut states = Vec::with_capacity(STATES_PER_PHONE);
                let mut self_loop = Vec::with_capacity(STATES_PER_PHONE);
                for s in 0..STATES_PER_PHONE {
                    let sid = p * STATES_PER_PHONE + s;
                    let prior = &phone.states[s];
                    let acc = &accs[sid];
                    if acc.n.iter().sum::<f64>() <= 0.0 {
                        states.push(prior.clone());
                    } else {
                        let (gmm, empty) = acc.m_step(prior, &self.floor, 1e-6, 0.0);
                        if empty.is_empty() {
                            states.push(gmm);
                        } else {
                            warn!(
                                "phone `{}` state {s}: {} starved mixture(s), reseeding",
                                phone.label,
                                empty.len()
                            );
                            reseeded = true;
                            states.push(reseed(&gmm, &empty, self.config.split_offset));
                        }
                    }
                    let (stay, leave) = (counts.stay[sid], counts.leave[sid]);
                    self_loop.push(if stay + leave > 0.0 {
                        (stay / (stay + leave)).clamp(self.config.min_self_loop, self.config.max_self_loop)
                    } else {
                        phone.self_loop[s]
                    });
                }
                PhoneHmm::new(phone.label.clone(), states, self_loop)
            })
            .collect::<Result<Vec<_>, _>>()
            .expect("re-estimated parameters stay valid");
        (PhoneHmmSet::new(phones).expect("phone labels unchanged"), reseeded)
    }

    fn flat_start(&self, placeholder: &PhoneHmmSet) -> Result<PhoneHmmSet, HmmError> {
        let n_states = placeholder.num_states();
        let mut accs: Vec<MomentAcc> = (0..n_states).map(|_| MomentAcc::new(1, self.dim)).collect();
        let mut counts = TransitionCounts {
            stay: vec![0.0; n_states],
            leave: vec![0.0; n_states],
        };
        for (x, tr) in self.utts {
            let graph = build_composite_graph(placeholder, tr, &self.config.silence)?;
            let mandatory = graph.mandatory_states();
            let seg = flat_start_segmentation(x.num_frames(), mandatory.len())?;
            for t in 0..seg.len() {
                let sid = graph.states[mandatory[seg[t]]].state_id;
                accs[sid].add(placeholder.state_gmm(sid), x.row(t), &[1.0]);
                if t + 1 < seg.len() {
                    if seg[t + 1] == seg[t] {
                        counts.stay[sid] += 1.0;
                    } else {
                        counts.leave[sid] += 1.0;
                    }
                }
            }
        }
        Ok(self.rebuild(placeholder, &accs, &counts).0)
    }

    fn split(&self, set: &PhoneHmmSet) -> PhoneHmmSet {
        let sil = set.silence_index();
        let phones = set
            .phones()
            .iter()
            .enumerate()
            .map(|(p, phone)| {
                let target = if p == sil {
                    self.config.silence_mixtures
                } else {
                    self.config.mixtures
                };
                let states = phone
                    .states
                    .iter()
                    .map(|g| split_heaviest(g, target, self.config.split_offset))
                    .collect();
                PhoneHmm::new(phone.label.clone(), states, phone.self_loop.clone())
            })
            .collect::<Result<Vec<_>, _>>()
            .expect("split keeps parameters valid");
        PhoneHmmSet::new(phones).expect("phone labels unchanged")
    }

    fn at_target(&self, set: &PhoneHmmSet) -> bool {
        let sil = set.silence_index();
        set.phones().iter().enumerate().all(|(p, phone)| {
            let target = if p == sil {
                self.config.silence_mixtures
            } else {
                self.config.mixtures
            };
            phone.states.iter().all(|g| g.num_components() >= target)
        })
    }
}

/// Flat start, Viterbi re-estimation on single Gaussians, then binary
/// mixture splitting up to `G` (`G_sil` for silence) with re-estimation
/// after every split. `inventory` lists the speech phones; every one must
/// occur in some transcript.
pub fn train_monophone_hmms(
    utts: &[TrainingUtterance<'_>],
    inventory: &[String],
    config: &HmmTrainConfig,
) -> Result<HmmTraining, HmmError> {
    config.validate()?;
    let first = utts
        .first()
        .ok_or_else(|| HmmError::InvalidConfig("no training utterances".into()))?;
    let dim = first.0.dim();
    let speech: Vec<&String> = inventory.iter().filter(|p| *p != SILENCE_LABEL).collect();
    let known: HashSet<&str> = speech.iter().map(|s| s.as_str()).collect();
    let mut seen = HashSet::new();
    for (x, tr) in utts {
        if x.dim() != dim {
            return Err(HmmError::DimensionMismatch {
                expected: dim,
                found: x.dim(),
            });
        }
        if tr.is_empty() {
            return Err(HmmError::EmptyTranscript);
        }
        for p in tr.iter() {
            if !known.contains(p.as_str()) {
                return Err(HmmError::UnknownPhone(p.clone()));
            }
            seen.insert(p.as_str());
        }
    }
    if let Some(missing) = speech.iter().find(|p| !seen.contains(p.as_str())) {
        return Err(HmmError::PhoneMissing((*missing).clone()));
    }

    let pooled: Vec<&FeatureMatrix> = utts.iter().map(|(x, _)| *x).collect();
    let pooled = FeatureMatrix::vstack(&pooled)?;
    let (mean, var) = global_moments(pooled.as_slice(), dim);
    let floor: Vec<f64> = var
        .iter()
        .map(|v| (config.variance_floor_ratio * v).max(1e-10))
        .collect();
    let var: Vec<f64> = var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();
    let global = Gmm::new(vec![1.0], mean, var, dim)?;
    let placeholder_phone = |label: &str| {
        PhoneHmm::new(
            label,
            vec![global.clone(); STATES_PER_PHONE],
            vec![0.5; STATES_PER_PHONE],
        )
    };
    let mut phones = speech
        .iter()
        .map(|p| placeholder_phone(p))
        .collect::<Result<Vec<_>, _>>()?;
    phones.push(placeholder_phone(SILENCE_LABEL)?);
    let placeholder = PhoneHmmSet::new(phones)?;

    let trainer = Trainer {
        utts,
        config: *config,
        floor,
        dim,
    };
    let mut set = trainer.flat_start(&placeholder)?;
    let mut history = Vec::new();
    let mut rounds = config.initial_rounds;
    loop {
        let mut stage = Vec::new();
        let mut alignments = trainer.align_all(&set)?;
        stage.push(trainer.objective(&alignments));
        let mut left = rounds;
        while left > 0 {
            let (next, reseeded) = trainer.reestimate(&set, &alignments);
            set = next;
            left -= 1;
            alignments = trainer.align_all(&set)?;
            let obj = trainer.objective(&alignments);
            if reseeded {
                history.push(std::mem::take(&mut stage));
            }
            stage.push(obj);
        }
        debug!("hmm training stage {}: {:?}", history.len(), stage);
        history.push(stage);
        if trainer.at_target(&set) {
            break;
        }
        set = trainer.split(&set);
        rounds = config.rounds_per_split;
    }
    Ok(HmmTraining { hmm_set: set, history })
}
