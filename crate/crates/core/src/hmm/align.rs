use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::graph::CompositeHmm;
use super::model::{PhoneHmmSet, StateModels};
use super::HmmError;
use crate::features::FeatureMatrix;
use crate::gmm::Gmm;
use crate::math::{log_add, log_sum_exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlignAlgo {
    Viterbi,
    ForwardBackward,
}

impl AlignAlgo {
    pub fn as_str(self) -> &'static str {
        match self {
            AlignAlgo::Viterbi => "viterbi",
            AlignAlgo::ForwardBackward => "fb",
        }
    }
}

impl fmt::Display for AlignAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlignAlgo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "viterbi" => Ok(AlignAlgo::Viterbi),
            "fb" | "forward-backward" => Ok(AlignAlgo::ForwardBackward),
            other => Err(format!("unknown alignment algorithm `{other}` (viterbi|fb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignOptions {
    /// Posteriors below this are dropped and the frame renormalized.
    pub prune: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { prune: 1e-8 }
    }
}

impl AlignOptions {
    /// No pruning; posteriors are exact up to rounding.
    pub fn exact() -> Self {
        Self { prune: 0.0 }
    }
}

/// Anything that maps a global state id to its emission GMM.
pub trait StateEmitters {
    fn emitter(&self, state_id: usize) -> &Gmm;
    fn emitter_dim(&self) -> usize;
}

impl StateEmitters for PhoneHmmSet {
    fn emitter(&self, state_id: usize) -> &Gmm {
        self.state_gmm(state_id)
    }

    fn emitter_dim(&self) -> usize {
        self.dim()
    }
}

impl StateEmitters for StateModels {
    fn emitter(&self, state_id: usize) -> &Gmm {
        &self.gmms[state_id]
    }

    fn emitter_dim(&self) -> usize {
        self.dim()
    }
}

/// Weighted mixture log-densities `ln w_g + ln N(x_t | μ_g, Σ_g)` for every
/// frame and graph state, plus the state log-likelihoods `ln b_j(x_t)`.
/// Graph states sharing a global state share storage.
#[derive(Debug, Clone)]
pub struct Emissions {
    frames: usize,
    states: usize,
    log_b: Vec<f64>,
    mix: Vec<f64>,
    /// Per graph state: offset of its mixtures within a frame's stride.
    mix_offset: Vec<usize>,
    mix_count: Vec<usize>,
    stride: usize,
}

impl Emissions {
    pub fn compute<M: StateEmitters + ?Sized>(
        graph: &CompositeHmm,
        models: &M,
        frames: &FeatureMatrix,
    ) -> Result<Self, HmmError> {
        if frames.dim() != models.emitter_dim() {
            return Err(HmmError::DimensionMismatch {
                expected: models.emitter_dim(),
                found: frames.dim(),
            });
        }
        let n = graph.num_states();
        // Unique global states in order of first appearance.
        let mut unique: Vec<usize> = Vec::new();
        let mut slot_of = vec![0; n];
        for (j, s) in graph.states.iter().enumerate() {
            slot_of[j] = match unique.iter().position(|&u| u == s.state_id) {
                Some(k) => k,
                None => {
                    unique.push(s.state_id);
                    unique.len() - 1
                }
            };
        }
        let mut unique_offset = Vec::with_capacity(unique.len());
        let mut stride = 0;
        for &u in &unique {
            unique_offset.push(stride);
            stride += models.emitter(u).num_components();
        }
        let t_count = frames.num_frames();
        let mut mix = vec![0.0; t_count * stride];
        let mut unique_b = vec![0.0; t_count * unique.len()];
        for (t, x) in frames.rows().enumerate() {
            for (k, &u) in unique.iter().enumerate() {
                let g = models.emitter(u);
                let out = &mut mix[t * stride + unique_offset[k]..][..g.num_components()];
                g.weighted_log_densities(x, out);
                unique_b[t * unique.len() + k] = log_sum_exp(out);
            }
        }
        let mut log_b = vec![0.0; t_count * n];
        for t in 0..t_count {
            for j in 0..n {
                log_b[t * n + j] = unique_b[t * unique.len() + slot_of[j]];
            }
        }
        Ok(Self {
            frames: t_count,
            states: n,
            log_b,
            mix,
            mix_offset: slot_of.iter().map(|&k| unique_offset[k]).collect(),
            mix_count: slot_of
                .iter()
                .map(|&k| models.emitter(unique[k]).num_components())
                .collect(),
            stride,
        })
    }

    /// Single-mixture emissions from a `T × N` table of state
    /// log-likelihoods.
    pub fn from_log_likelihoods(frames: usize, states: usize, values: Vec<f64>) -> Result<Self, HmmError> {
        if values.len() != frames * states {
            return Err(HmmError::ShapeMismatch(format!(
                "{} emission values for {frames} frames × {states} states",
                values.len()
            )));
        }
        Ok(Self {
            frames,
            states,
            mix: values.clone(),
            log_b: values,
            mix_offset: (0..states).collect(),
            mix_count: vec![1; states],
            stride: states,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_states(&self) -> usize {
        self.states
    }

    pub fn log_b(&self, t: usize, j: usize) -> f64 {
        self.log_b[t * self.states + j]
    }

    pub fn mixture_log_densities(&self, t: usize, j: usize) -> &[f64] {
        &self.mix[t * self.stride + self.mix_offset[j]..][..self.mix_count[j]]
    }
}

fn check_sizes(graph: &CompositeHmm, emis: &Emissions) -> Result<(), HmmError> {
    if emis.num_states() != graph.num_states() {
        return Err(HmmError::ShapeMismatch(format!(
            "emissions for {} states, graph has {}",
            emis.num_states(),
            graph.num_states()
        )));
    }
    let min = graph.min_frames();
    if emis.num_frames() < min {
        return Err(HmmError::NoValidPath {
            frames: emis.num_frames(),
            min_frames: min,
        });
    }
    Ok(())
}

/// Best state path and its log-probability (transitions included, final
/// exit excluded). Ties go to the lower state index.
pub fn viterbi_decode(graph: &CompositeHmm, emis: &Emissions) -> Result<(Vec<usize>, f64), HmmError> {
    check_sizes(graph, emis)?;
    let n = graph.num_states();
    let t_count = emis.num_frames();
    let mut delta = vec![f64::NEG_INFINITY; n];
    let mut next = vec![f64::NEG_INFINITY; n];
    let mut back = vec![u32::MAX; t_count * n];
    for &(j, lp) in &graph.entry {
        delta[j] = lp + emis.log_b(0, j);
    }
    for t in 1..t_count {
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut arg = u32::MAX;
            for &(i, lp) in &graph.incoming[j] {
                let v = delta[i] + lp;
                if v > best {
                    best = v;
                    arg = i as u32;
                }
            }
            next[j] = best + emis.log_b(t, j);
            back[t * n + j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut finals = graph.finals.clone();
    finals.sort_unstable();
    let mut best = f64::NEG_INFINITY;
    let mut end = usize::MAX;
    for &j in &finals {
        if delta[j] > best {
            best = delta[j];
            end = j;
        }
    }
    if end == usize::MAX {
        return Err(HmmError::NoValidPath {
            frames: t_count,
            min_frames: graph.min_frames(),
        });
    }
    let mut path = vec![0; t_count];
    path[t_count - 1] = end;
    for t in (1..t_count).rev() {
        path[t - 1] = back[t * n + path[t]] as usize;
    }
    Ok((path, best))
}

/// State occupancies `γ_t(j)` (`T × N`) and the total log-likelihood.
pub fn forward_backward(graph: &CompositeHmm, emis: &Emissions) -> Result<(Vec<f64>, f64), HmmError> {
    check_sizes(graph, emis)?;
    let n = graph.num_states();
    let t_count = emis.num_frames();
    let mut alpha = vec![f64::NEG_INFINITY; t_count * n];
    for &(j, lp) in &graph.entry {
        alpha[j] = lp + emis.log_b(0, j);
    }
    for t in 1..t_count {
        let (prev, cur) = alpha.split_at_mut(t * n);
        let prev = &prev[(t - 1) * n..];
        for j in 0..n {
            let mut acc = f64::NEG_INFINITY;
            for &(i, lp) in &graph.incoming[j] {
                acc = log_add(acc, prev[i] + lp);
            }
            cur[j] = acc + emis.log_b(t, j);
        }
    }
    let mut beta = vec![f64::NEG_INFINITY; t_count * n];
    for &f in &graph.finals {
        beta[(t_count - 1) * n + f] = 0.0;
    }
    for t in (0..t_count.saturating_sub(1)).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * n);
        let cur = &mut cur[t * n..];
        let next = &next[..n];
        for j in 0..n {
            let v = next[j] + emis.log_b(t + 1, j);
            if v == f64::NEG_INFINITY {
                continue;
            }
            for &(i, lp) in &graph.incoming[j] {
                cur[i] = log_add(cur[i], lp + v);
            }
        }
    }
    let last = &alpha[(t_count - 1) * n..];
    let total = graph
        .finals
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &f| log_add(acc, last[f]));
    if total == f64::NEG_INFINITY {
        return Err(HmmError::NoValidPath {
            frames: t_count,
            min_frames: graph.min_frames(),
        });
    }
    let gamma = alpha.iter().zip(&beta).map(|(a, b)| (a + b - total).exp()).collect();
    Ok((gamma, total))
}

/// One nonzero `P_t(j, g)` entry; `state` indexes the graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupancy {
    pub state: usize,
    pub mixture: usize,
    pub posterior: f64,
}

/// Per-frame sparse state–mixture posteriors of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub algo: AlignAlgo,
    /// Best-path log-probability (Viterbi) or total log-likelihood (FB).
    pub log_likelihood: f64,
    /// Best state path; always present for Viterbi, also decoded for FB
    /// when requested.
    pub path: Option<Vec<usize>>,
    /// Global state id of every graph state.
    pub state_ids: Vec<usize>,
    pub silence: Vec<bool>,
    offsets: Vec<usize>,
    entries: Vec<Occupancy>,
}

impl Alignment {
    pub fn num_frames(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn frame(&self, t: usize) -> &[Occupancy] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    /// Graph-state posteriors of frame `t` (mixtures summed), ascending by
    /// state.
    pub fn state_posteriors(&self, t: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for o in self.frame(t) {
            match out.last_mut() {
                Some((s, p)) if *s == o.state => *p += o.posterior,
                _ => out.push((o.state, o.posterior)),
            }
        }
        out
    }

    /// Content hash over algorithm, path and every posterior.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.algo.as_str());
        h.update(self.log_likelihood.to_le_bytes());
        for &o in &self.offsets {
            h.update((o as u64).to_le_bytes());
        }
        for e in &self.entries {
            h.update((e.state as u64).to_le_bytes());
            h.update((e.mixture as u64).to_le_bytes());
            h.update(e.posterior.to_le_bytes());
        }
        crate::corpus_io::hex_digest(h)
    }

    pub(crate) fn from_frames(
        algo: AlignAlgo,
        log_likelihood: f64,
        path: Option<Vec<usize>>,
        graph: &CompositeHmm,
        frames: Vec<Vec<Occupancy>>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(frames.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for f in frames {
            entries.extend(f);
            offsets.push(entries.len());
        }
        Self {
            algo,
            log_likelihood,
            path,
            state_ids: graph.states.iter().map(|s| s.state_id).collect(),
            silence: graph.states.iter().map(|s| s.silence).collect(),
            offsets,
            entries,
        }
    }
}

/// Drops entries below `prune` (keeping the largest if all fall below) and
/// rescales the rest to sum to one.
fn prune_and_normalize(frame: &mut Vec<Occupancy>, prune: f64) {
    if prune > 0.0 && frame.iter().any(|o| o.posterior >= prune) {
        frame.retain(|o| o.posterior >= prune);
    }
    frame.retain(|o| o.posterior > 0.0);
    let sum: f64 = frame.iter().map(|o| o.posterior).sum();
    if sum > 0.0 {
        frame.iter_mut().for_each(|o| o.posterior /= sum);
    }
}

fn mixture_posteriors(emis: &Emissions, t: usize, j: usize, scale: f64, out: &mut Vec<Occupancy>) {
    let lb = emis.log_b(t, j);
    for (g, &lm) in emis.mixture_log_densities(t, j).iter().enumerate() {
        out.push(Occupancy {
            state: j,
            mixture: g,
            posterior: scale * (lm - lb).exp(),
        });
    }
}

/// Alignment from precomputed emissions.
pub fn align_emissions(
    graph: &CompositeHmm,
    emis: &Emissions,
    algo: AlignAlgo,
    options: &AlignOptions,
) -> Result<Alignment, HmmError> {
    let t_count = emis.num_frames();
    let n = graph.num_states();
    let mut frames = Vec::with_capacity(t_count);
    match algo {
        AlignAlgo::Viterbi => {
            let (path, score) = viterbi_decode(graph, emis)?;
            for (t, &j) in path.iter().enumerate() {
                let mut f = Vec::new();
                mixture_posteriors(emis, t, j, 1.0, &mut f);
                prune_and_normalize(&mut f, options.prune);
                frames.push(f);
            }
            Ok(Alignment::from_frames(algo, score, Some(path), graph, frames))
        }
        AlignAlgo::ForwardBackward => {
            let (gamma, total) = forward_backward(graph, emis)?;
            for t in 0..t_count {
                let mut f = Vec::new();
                for j in 0..n {
                    let g = gamma[t * n + j];
                    if g > 0.0 {
                        mixture_posteriors(emis, t, j, g, &mut f);
                    }
                }
                prune_and_normalize(&mut f, options.prune);
                frames.push(f);
            }
            Ok(Alignment::from_frames(algo, total, None, graph, frames))
        }
    }
}

/// Aligns `frames` to `graph` with emission GMMs from `models`.
pub fn align<M: StateEmitters + ?Sized>(
    graph: &CompositeHmm,
    models: &M,
    frames: &FeatureMatrix,
    algo: AlignAlgo,
    options: &AlignOptions,
) -> Result<Alignment, HmmError> {
    let emis = Emissions::compute(graph, models, frames)?;
    align_emissions(graph, &emis, algo, options)
}

pub fn viterbi_align<M: StateEmitters + ?Sized>(
    graph: &CompositeHmm,
    models: &M,
    frames: &FeatureMatrix,
) -> Result<Alignment, HmmError> {
    align(graph, models, frames, AlignAlgo::Viterbi, &AlignOptions::default())
}

pub fn fb_align<M: StateEmitters + ?Sized>(
    graph: &CompositeHmm,
    models: &M,
    frames: &FeatureMatrix,
) -> Result<Alignment, HmmError> {
    align(
        graph,
        models,
        frames,
        AlignAlgo::ForwardBackward,
        &AlignOptions::default(),
    )
}
