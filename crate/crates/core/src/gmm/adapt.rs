use std::ops::AddAssign;

use rayon::prelude::*;

use super::{Gmm, GmmError};
use crate::features::FeatureMatrix;

/// Frames per parallel work unit. Fixed so chunk boundaries, and therefore
/// floating-point summation order, never depend on the thread count.
pub(crate) const CHUNK_FRAMES: usize = 256;

/// Zero- and first-order statistics, `F_c` centred on the component mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmStats {
    pub dim: usize,
    pub n: Vec<f64>,
    /// `C × D`, component-major.
    pub f: Vec<f64>,
}

impl GmmStats {
    pub fn zeros(components: usize, dim: usize) -> Self {
        Self {
            dim,
            n: vec![0.0; components],
            f: vec![0.0; components * dim],
        }
    }

    pub fn for_model(gmm: &Gmm) -> Self {
        Self::zeros(gmm.num_components(), gmm.dim())
    }

    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    pub fn f_slot(&self, c: usize) -> &[f64] {
        &self.f[c * self.dim..(c + 1) * self.dim]
    }

    pub fn total_mass(&self) -> f64 {
        self.n.iter().sum()
    }

    /// Adds one frame's contribution given its component posteriors.
    pub fn add_frame(&mut self, gmm: &Gmm, frame: &[f64], post: &[f64]) {
        let d = self.dim;
        for (c, &p) in post.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            self.n[c] += p;
            let mu = gmm.mean(c);
            let f = &mut self.f[c * d..(c + 1) * d];
            for i in 0..d {
                f[i] += p * (frame[i] - mu[i]);
            }
        }
    }

    fn check_shape(&self, other: &GmmStats) -> Result<(), GmmError> {
        if self.n.len() != other.n.len() || self.dim != other.dim {
            return Err(GmmError::ShapeMismatch(format!(
                "stats {}×{} vs {}×{}",
                self.n.len(),
                self.dim,
                other.n.len(),
                other.dim
            )));
        }
        Ok(())
    }

    /// Elementwise sum; associative and commutative.
    pub fn merge(&mut self, other: &GmmStats) -> Result<(), GmmError> {
        self.check_shape(other)?;
        *self += other;
        Ok(())
    }
}

impl AddAssign<&GmmStats> for GmmStats {
    fn add_assign(&mut self, other: &GmmStats) {
        self.n.iter_mut().zip(&other.n).for_each(|(a, b)| *a += b);
        self.f.iter_mut().zip(&other.f).for_each(|(a, b)| *a += b);
    }
}

/// `N_c = Σ_t P(c|x_t)`, `F_c = Σ_t P(c|x_t)(x_t − μ_c)`.
pub fn accumulate_stats(gmm: &Gmm, frames: &FeatureMatrix) -> Result<GmmStats, GmmError> {
    accumulate_rows(gmm, frames.as_slice(), frames.dim())
}

/// As [`accumulate_stats`] over a flat row-major buffer; an empty buffer
/// gives zero statistics.
pub fn accumulate_rows(gmm: &Gmm, data: &[f64], dim: usize) -> Result<GmmStats, GmmError> {
    if dim != gmm.dim() {
        return Err(GmmError::DimensionMismatch {
            expected: gmm.dim(),
            found: dim,
        });
    }
    let step = CHUNK_FRAMES * dim.max(1);
    let partials: Vec<GmmStats> = data
        .par_chunks(step)
        .map(|chunk| {
            let mut acc = GmmStats::for_model(gmm);
            let mut post = vec![0.0; gmm.num_components()];
            for frame in chunk.chunks_exact(dim.max(1)) {
                let frame = &frame[..dim];
                gmm.posteriors_into(frame, &mut post);
                acc.add_frame(gmm, frame, &post);
            }
            acc
        })
        .collect();
    let mut total = GmmStats::for_model(gmm);
    for p in &partials {
        total += p;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig {
    /// Relevance factor `r`.
    pub relevance: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { relevance: 16.0 }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<(), GmmError> {
        if !(self.relevance >= 0.0) || self.relevance.is_infinite() {
            return Err(GmmError::InvalidConfig(format!(
                "relevance factor must be finite and non-negative, got {}",
                self.relevance
            )));
        }
        Ok(())
    }
}

/// Mean-only MAP: `μ̂_c = μ_c + F_c / (N_c + r)`. Slots with `N_c + r = 0`
/// keep the background mean.
pub(crate) fn map_means(means: &[f64], n: &[f64], f: &[f64], dim: usize, r: f64) -> Vec<f64> {
    let mut out = means.to_vec();
    for (c, &nc) in n.iter().enumerate() {
        let denom = nc + r;
        if denom == 0.0 {
            continue;
        }
        let alpha = 1.0 / denom;
        for i in c * dim..(c + 1) * dim {
            out[i] += alpha * f[i];
        }
    }
    out
}

pub fn map_adapt(ubm: &Gmm, stats: &GmmStats, config: &MapConfig) -> Result<Gmm, GmmError> {
    config.validate()?;
    if stats.num_components() != ubm.num_components() || stats.dim != ubm.dim() {
        return Err(GmmError::ShapeMismatch(format!(
            "stats {}×{} for model {}×{}",
            stats.num_components(),
            stats.dim,
            ubm.num_components(),
            ubm.dim()
        )));
    }
    let means = map_means(ubm.means(), &stats.n, &stats.f, ubm.dim(), config.relevance);
    ubm.with_means(means)
}

/// `Σ_t [ln p(x_t | speaker) − ln p(x_t | ubm)]`, unnormalized.
pub fn score_gmm_ubm(speaker: &Gmm, ubm: &Gmm, frames: &FeatureMatrix) -> Result<f64, GmmError> {
    if speaker.num_components() != ubm.num_components() || speaker.dim() != ubm.dim() {
        return Err(GmmError::ShapeMismatch(format!(
            "speaker model {}×{} vs background {}×{}",
            speaker.num_components(),
            speaker.dim(),
            ubm.num_components(),
            ubm.dim()
        )));
    }
    if frames.dim() != ubm.dim() {
        return Err(GmmError::DimensionMismatch {
            expected: ubm.dim(),
            found: frames.dim(),
        });
    }
    let mut buf = vec![0.0; ubm.num_components()];
    let mut total = 0.0;
    for x in frames.rows() {
        speaker.weighted_log_densities(x, &mut buf);
        let spk = crate::math::log_sum_exp(&buf);
        ubm.weighted_log_densities(x, &mut buf);
        total += spk - crate::math::log_sum_exp(&buf);
    }
    Ok(total)
}
