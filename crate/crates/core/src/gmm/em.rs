use std::collections::HashSet;

use log::warn;
use rayon::prelude::*;

use super::adapt::CHUNK_FRAMES;
use super::{Gmm, GmmError};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    /// EM iterations after each split (and for the final size).
    pub iterations: usize,
    /// Stop a stage early once the per-frame log-likelihood gain drops
    /// below this value.
    pub tolerance: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub variance_floor_ratio: f64,
    /// Split perturbation in units of the component standard deviation.
    pub split_offset: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            tolerance: 1e-6,
            variance_floor_ratio: 1e-3,
            split_offset: 0.1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), GmmError> {
        if !(self.variance_floor_ratio > 0.0) || !(self.split_offset > 0.0) || self.tolerance < 0.0 {
            return Err(GmmError::InvalidConfig(
                "variance floor ratio and split offset must be positive, tolerance non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A trained mixture and its log-likelihood history. Each inner vector is
/// one stage (a fixed component count): the average per-frame
/// log-likelihood before the first and after every EM iteration. A new
/// stage starts at each split or reseed, so only values within a stage are
/// comparable.
#[derive(Debug, Clone)]
pub struct EmTraining {
    pub gmm: Gmm,
    pub history: Vec<Vec<f64>>,
}

/// Absolute lower bound for floored variances, for constant dimensions.
const MIN_VARIANCE: f64 = 1e-10;

/// Population mean and variance per dimension of a flat row-major buffer.
pub(crate) fn global_moments(data: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let t = (data.len() / dim.max(1)).max(1) as f64;
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim.max(1)) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; dim];
    for row in data.chunks_exact(dim.max(1)) {
        for i in 0..dim {
            let z = row[i] - mean[i];
            var[i] += z * z;
        }
    }
    var.iter_mut().for_each(|v| *v /= t);
    (mean, var)
}

/// Posterior-weighted moments centred on the current component means, so
/// the M-step avoids the cancellation of raw second moments.
#[derive(Debug, Clone)]
pub(crate) struct MomentAcc {
    pub dim: usize,
    pub n: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub log_lik: f64,
    pub frames: f64,
}

impl MomentAcc {
    pub fn new(components: usize, dim: usize) -> Self {
        Self {
            dim,
            n: vec![0.0; components],
            s1: vec![0.0; components * dim],
            s2: vec![0.0; components * dim],
            log_lik: 0.0,
            frames: 0.0,
        }
    }

    /// Adds `x` with per-component masses `post` (already scaled by any
    /// frame weight).
    pub fn add(&mut self, gmm: &Gmm, x: &[f64], post: &[f64]) {
        let d = self.dim;
        for (c, &p) in post.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.n[c] += p;
            let mu = gmm.mean(c);
            for i in 0..d {
                let z = x[i] - mu[i];
                self.s1[c * d + i] += p * z;
                self.s2[c * d + i] += p * z * z;
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAcc) {
        self.n.iter_mut().zip(&other.n).for_each(|(a, b)| *a += b);
        self.s1.iter_mut().zip(&other.s1).for_each(|(a, b)| *a += b);
        self.s2.iter_mut().zip(&other.s2).for_each(|(a, b)| *a += b);
        self.log_lik += other.log_lik;
        self.frames += other.frames;
    }

    /// ML re-estimation with floored variances. Components whose mass is at
    /// most `min_mass` keep their previous mean and variance and get weight
    /// `weight_floor` before renormalization; their indices are returned.
    pub fn m_step(&self, prior: &Gmm, floor: &[f64], min_mass: f64, weight_floor: f64) -> (Gmm, Vec<usize>) {
        let d = self.dim;
        let c_count = self.n.len();
        let total: f64 = self.n.iter().sum();
        let mut weights = vec![0.0; c_count];
        let mut means = prior.means().to_vec();
        let mut vars = prior.variances().to_vec();
        let mut empty = Vec::new();
        for c in 0..c_count {
            let nc = self.n[c];
            if nc <= min_mass || total <= 0.0 {
                empty.push(c);
                weights[c] = weight_floor;
                continue;
            }
            weights[c] = nc / total;
            let mu = prior.mean(c);
            for i in 0..d {
                let shift = self.s1[c * d + i] / nc;
                means[c * d + i] = mu[i] + shift;
                let v = self.s2[c * d + i] / nc - shift * shift;
                vars[c * d + i] = v.max(floor[i]);
            }
        }
        if !empty.is_empty() {
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        (Gmm::from_parts_unchecked(weights, means, vars, d), empty)
    }
}

/// Splits the heaviest components (`μ ± offset·σ`, halved weights) until the
/// mixture has `target` components or has doubled, whichever comes first.
pub(crate) fn split_heaviest(gmm: &Gmm, target: usize, offset: f64) -> Gmm {
    let c = gmm.num_components();
    let d = gmm.dim();
    let count = target.saturating_sub(c).min(c);
    let mut order: Vec<usize> = (0..c).collect();
    // Stable sort keeps index order among equal weights.
    order.sort_by(|&a, &b| gmm.weights()[b].total_cmp(&gmm.weights()[a]));
    let chosen: HashSet<usize> = order[..count].iter().copied().collect();
    let mut weights = Vec::with_capacity(c + count);
    let mut means = Vec::with_capacity((c + count) * d);
    let mut vars = Vec::with_capacity((c + count) * d);
    let mut extra_w = Vec::new();
    let mut extra_m = Vec::new();
    let mut extra_v = Vec::new();
    for k in 0..c {
        let w = gmm.weights()[k];
        let mu = gmm.mean(k);
        let var = gmm.variance(k);
        if chosen.contains(&k) {
            weights.push(w / 2.0);
            means.extend(mu.iter().zip(var).map(|(m, v)| m + offset * v.sqrt()));
            vars.extend_from_slice(var);
            extra_w.push(w / 2.0);
            extra_m.extend(mu.iter().zip(var).map(|(m, v)| m - offset * v.sqrt()));
            extra_v.extend_from_slice(var);
        } else {
            weights.push(w);
            means.extend_from_slice(mu);
            vars.extend_from_slice(var);
        }
    }
    weights.extend(extra_w);
    means.extend(extra_m);
    vars.extend(extra_v);
    Gmm::from_parts_unchecked(weights, means, vars, d)
}

fn e_step(gmm: &Gmm, data: &[f64], dim: usize) -> MomentAcc {
    accumulate(gmm, data, dim, false)
}

/// With `hard` set, each frame's whole mass goes to its most probable
/// component (ties to the lower index).
fn accumulate(gmm: &Gmm, data: &[f64], dim: usize, hard: bool) -> MomentAcc {
    let c = gmm.num_components();
    let partials: Vec<MomentAcc> = data
        .par_chunks(CHUNK_FRAMES * dim.max(1))
        .map(|chunk| {
            let mut acc = MomentAcc::new(c, dim);
            let mut post = vec![0.0; c];
            for x in chunk.chunks_exact(dim.max(1)) {
                let x = &x[..dim];
                acc.log_lik += gmm.posteriors_into(x, &mut post);
                acc.frames += 1.0;
                if hard {
                    let best = post
                        .iter()
                        .enumerate()
                        .fold(0, |b, (k, p)| if *p > post[b] { k } else { b });
                    post.iter_mut().for_each(|p| *p = 0.0);
                    post[best] = 1.0;
                }
                acc.add(gmm, x, &post);
            }
            acc
        })
        .collect();
    let mut total = MomentAcc::new(c, dim);
    for p in &partials {
        total.merge(p);
    }
    total
}

fn count_distinct_up_to(data: &[f64], dim: usize, limit: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for row in data.chunks_exact(dim.max(1)) {
        seen.insert(row.iter().map(|v| v.to_bits()).collect());
        if seen.len() >= limit {
            break;
        }
    }
    seen.len()
}

/// Trains a `components`-mixture by binary splitting from the global
/// Gaussian with EM after every split.
pub fn train_gmm_em(frames: &FeatureMatrix, components: usize, config: &EmConfig) -> Result<EmTraining, GmmError> {
    config.validate()?;
    if components == 0 {
        return Err(GmmError::InvalidConfig("component count must be at least 1".into()));
    }
    let dim = frames.dim();
    let data = frames.as_slice();
    let distinct = count_distinct_up_to(data, dim, components);
    if distinct < components {
        return Err(GmmError::InsufficientData {
            needed: components,
            found: distinct,
        });
    }
    let (mean, var) = global_moments(data, dim);
    let floor: Vec<f64> = var
        .iter()
        .map(|v| (config.variance_floor_ratio * v).max(MIN_VARIANCE))
        .collect();
    let var: Vec<f64> = var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();
    let mut gmm = Gmm::from_parts_unchecked(vec![1.0], mean, var, dim);
    let min_mass = 1e-8 * frames.num_frames() as f64;
    let mut history = Vec::new();

    loop {
        let mut stage = Vec::new();
        let mut reseeded = false;
        for _ in 0..config.iterations {
            let acc = e_step(&gmm, data, dim);
            let ll = acc.log_lik / acc.frames;
            let converged = stage.last().is_some_and(|prev| ll - prev < config.tolerance);
            stage.push(ll);
            if converged {
                break;
            }
            let (next, empty) = acc.m_step(&gmm, &floor, min_mass, 0.0);
            if !empty.is_empty() {
                warn!(
                    "{} degenerate component(s) in a {}-mixture, reseeding by splitting",
                    empty.len(),
                    gmm.num_components()
                );
                gmm = reseed(&next, &empty, config.split_offset);
                reseeded = true;
                break;
            }
            gmm = next;
        }
        if !reseeded {
            let acc = e_step(&gmm, data, dim);
            let ll = acc.log_lik / acc.frames;
            if stage.last() != Some(&ll) {
                stage.push(ll);
            }
        }
        history.push(stage);
        if reseeded {
            continue;
        }
        if gmm.num_components() >= components {
            break;
        }
        gmm = refine_split(
            split_heaviest(&gmm, components, config.split_offset),
            data,
            dim,
            &floor,
            min_mass,
        );
    }
    Ok(EmTraining { gmm, history })
}

/// One hard-assignment re-estimation right after a split. Children of a
/// symmetric split start at a saddle of the likelihood where soft EM moves
/// them apart very slowly; a hard partition separates them at once. Falls
/// back to the plain split if any component would be left without frames.
fn refine_split(split: Gmm, data: &[f64], dim: usize, floor: &[f64], min_mass: f64) -> Gmm {
    let acc = accumulate(&split, data, dim, true);
    let (refined, empty) = acc.m_step(&split, floor, min_mass, 0.0);
    if empty.is_empty() {
        refined
    } else {
        split
    }
}

/// Drops the `empty` components and refills the mixture by splitting the
/// heaviest survivors.
pub(crate) fn reseed(gmm: &Gmm, empty: &[usize], offset: f64) -> Gmm {
    let d = gmm.dim();
    let keep: Vec<usize> = (0..gmm.num_components()).filter(|c| !empty.contains(c)).collect();
    let weights: Vec<f64> = keep.iter().map(|&c| gmm.weights()[c]).collect();
    let sum: f64 = weights.iter().sum();
    let weights = weights.iter().map(|w| w / sum).collect();
    let means = keep.iter().flat_map(|&c| gmm.mean(c).to_vec()).collect();
    let vars = keep.iter().flat_map(|&c| gmm.variance(c).to_vec()).collect();
    let mut out = Gmm::from_parts_unchecked(weights, means, vars, d);
    while out.num_components() < gmm.num_components() {
        out = split_heaviest(&out, gmm.num_components(), offset);
    }
    out
}
