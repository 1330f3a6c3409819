//! Total-variability subspace: i-vector extraction from zero- and
//! first-order statistics (GMM or HMM slot layouts), EM training of `T`,
//! multi-utterance enrollment and cosine scoring.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::gmm::{Gmm, GmmStats};
use crate::hmm::StateModels;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IvectorError {
    #[error("statistics layout {found} does not match the model layout {expected}")]
    LayoutMismatch { expected: String, found: String },
    #[error("statistics contain non-finite values")]
    NonFiniteStats,
    #[error("need at least {needed} utterances, got {found}")]
    InsufficientUtterances { needed: usize, found: usize },
    #[error("cosine score of a zero vector")]
    ZeroVector,
    #[error("i-vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("enrollment needs at least one utterance")]
    EmptyEnrollment,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// `M = m + T w` over a super-vector of `slots × D` rows. `Σ` stays fixed
/// at the background model's per-slot diagonal variances.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalVariability {
    dim: usize,
    rank: usize,
    /// `(slots · D) × R`, row-major.
    t: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl TotalVariability {
    pub fn new(
        t: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
        rank: usize,
    ) -> Result<Self, IvectorError> {
        if rank == 0 || dim == 0 {
            return Err(IvectorError::InvalidModel(
                "rank and dimension must be at least 1".into(),
            ));
        }
        if means.len() % dim != 0 || variances.len() != means.len() || t.len() != means.len() * rank {
            return Err(IvectorError::InvalidModel(format!(
                "T has {} values, means {}, variances {} for D={dim}, R={rank}",
                t.len(),
                means.len(),
                variances.len()
            )));
        }
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(IvectorError::InvalidModel("variances must be positive".into()));
        }
        Ok(Self {
            dim,
            rank,
            t,
            means,
            variances,
        })
    }

    /// Seeded initialization: `T_ij ~ N(0, 1) · 0.1 · √σ²_i`.
    pub fn initialize(
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
        rank: usize,
        seed: u64,
    ) -> Result<Self, IvectorError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = variances
            .iter()
            .flat_map(|v| {
                let scale = 0.1 * v.sqrt();
                (0..rank)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect::<Vec<_>>()
            })
            .collect();
        Self::new(t, means, variances, dim, rank)
    }

    pub fn initialize_for_gmm(ubm: &Gmm, rank: usize, seed: u64) -> Result<Self, IvectorError> {
        Self::initialize(ubm.means().to_vec(), ubm.variances().to_vec(), ubm.dim(), rank, seed)
    }

    pub fn initialize_for_states(models: &StateModels, rank: usize, seed: u64) -> Result<Self, IvectorError> {
        Self::initialize(models.slot_means(), models.slot_variances(), models.dim(), rank, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn num_slots(&self) -> usize {
        self.means.len() / self.dim
    }

    /// Row count of `T` (`slots · D`).
    pub fn rows(&self) -> usize {
        self.means.len()
    }

    pub fn t_matrix(&self) -> &[f64] {
        &self.t
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn check_stats(&self, stats: &GmmStats) -> Result<(), IvectorError> {
        if stats.n.len() != self.num_slots() || stats.dim != self.dim {
            return Err(IvectorError::LayoutMismatch {
                expected: format!("{}×{}", self.num_slots(), self.dim),
                found: format!("{}×{}", stats.n.len(), stats.dim),
            });
        }
        if stats.n.iter().chain(&stats.f).any(|v| !v.is_finite()) || stats.n.iter().any(|n| *n < 0.0) {
            return Err(IvectorError::NonFiniteStats);
        }
        Ok(())
    }

    /// Precision `L = I + Σ_c N_c T_cᵀ Σ_c⁻¹ T_c` and linear term
    /// `b = Σ_c T_cᵀ Σ_c⁻¹ F_c`.
    fn posterior_terms(&self, stats: &GmmStats) -> (DMatrix<f64>, DVector<f64>) {
        let r = self.rank;
        let d = self.dim;
        let mut l = DMatrix::<f64>::identity(r, r);
        let mut b = DVector::<f64>::zeros(r);
        let mut scaled = vec![0.0; r];
        for (c, &nc) in stats.n.iter().enumerate() {
            for i in c * d..(c + 1) * d {
                let row = &self.t[i * r..(i + 1) * r];
                let inv = 1.0 / self.variances[i];
                let f = stats.f[i];
                if f != 0.0 {
                    for (k, tk) in row.iter().enumerate() {
                        b[k] += tk * inv * f;
                    }
                }
                if nc == 0.0 {
                    continue;
                }
                let w = nc * inv;
                for (k, tk) in row.iter().enumerate() {
                    scaled[k] = w * tk;
                }
                // Upper triangle only; mirrored below.
                for a in 0..r {
                    let sa = scaled[a];
                    if sa == 0.0 {
                        continue;
                    }
                    for bb in a..r {
                        l[(a, bb)] += sa * row[bb];
                    }
                }
            }
        }
        for a in 0..r {
            for bb in 0..a {
                l[(a, bb)] = l[(bb, a)];
            }
        }
        (l, b)
    }
}

/// Cholesky factorization, retrying with diagonal jitter `1e-10 · tr/R`
/// (growing tenfold) when the matrix is numerically indefinite.
fn cholesky(m: DMatrix<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    if let Some(c) = m.clone().cholesky() {
        return c;
    }
    let r = m.nrows();
    let mut jitter = 1e-10 * m.trace().abs().max(1.0) / r as f64;
    loop {
        warn!("regularizing a near-singular {r}×{r} system with jitter {jitter:e}");
        let mut j = m.clone();
        for k in 0..r {
            j[(k, k)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            return c;
        }
        jitter *= 10.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IVector {
    pub w: Vec<f64>,
    /// Posterior precision `L`, `R × R` row-major.
    pub precision: Option<Vec<f64>>,
}

/// `w = L⁻¹ Tᵀ Σ⁻¹ F` with `L = I + Tᵀ Σ⁻¹ N T`.
pub fn extract_ivector(tv: &TotalVariability, stats: &GmmStats) -> Result<IVector, IvectorError> {
    tv.check_stats(stats)?;
    let (l, b) = tv.posterior_terms(stats);
    let w = cholesky(l.clone()).solve(&b);
    Ok(IVector {
        w: w.iter().copied().collect(),
        precision: Some(l.transpose().iter().copied().collect()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmatrixConfig {
    pub rank: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TmatrixConfig {
    fn default() -> Self {
        Self {
            rank: 20,
            iterations: 10,
            seed: 0,
        }
    }
}

/// A trained subspace with the EM objective `Σ_s (−½ ln|L_s| + ½ b_sᵀ w_s)`
/// evaluated at the start of every iteration (the marginal log-likelihood
/// of the first-order statistics up to a constant).
#[derive(Debug, Clone)]
pub struct TmatrixTraining {
    pub tv: TotalVariability,
    pub history: Vec<f64>,
}

/// Utterances per parallel E-step work unit; fixed for reproducibility.
const UTTS_PER_CHUNK: usize = 16;

struct EStep {
    /// Per slot `Σ_s N_c(s) E[w wᵀ]`, `R × R` each.
    c: Vec<DMatrix<f64>>,
    /// `Σ_s F(s) E[w]ᵀ`, `(slots · D) × R` row-major.
    a: Vec<f64>,
    objective: f64,
}

fn e_step(tv: &TotalVariability, stats: &[GmmStats]) -> EStep {
    let r = tv.rank;
    let slots = tv.num_slots();
    let empty = || EStep {
        c: vec![DMatrix::zeros(r, r); slots],
        a: vec![0.0; tv.rows() * r],
        objective: 0.0,
    };
    let partials: Vec<EStep> = stats
        .par_chunks(UTTS_PER_CHUNK)
        .map(|chunk| {
            let mut acc = empty();
            for s in chunk {
                let (l, b) = tv.posterior_terms(s);
                let chol = cholesky(l);
                let w = chol.solve(&b);
                let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                acc.objective += -0.5 * log_det + 0.5 * b.dot(&w);
                let ww = chol.inverse() + &w * w.transpose();
                for (c, &nc) in s.n.iter().enumerate() {
                    if nc != 0.0 {
                        acc.c[c] += nc * &ww;
                    }
                }
                for (i, &f) in s.f.iter().enumerate() {
                    if f != 0.0 {
                        let row = &mut acc.a[i * r..(i + 1) * r];
                        for k in 0..r {
                            row[k] += f * w[k];
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = empty();
    for p in partials {
        for (a, b) in total.c.iter_mut().zip(&p.c) {
            *a += b;
        }
        total.a.iter_mut().zip(&p.a).for_each(|(a, b)| *a += b);
        total.objective += p.objective;
    }
    total
}

/// EM for `T` with `Σ` and `m` fixed: the E-step computes every utterance's
/// posterior moments of `w`; the M-step solves `T_c C_c = A_c` per slot.
/// Slots that never received mass keep their previous rows.
pub fn train_tmatrix(
    init: TotalVariability,
    stats: &[GmmStats],
    iterations: usize,
) -> Result<TmatrixTraining, IvectorError> {
    if stats.len() < init.rank {
        return Err(IvectorError::InsufficientUtterances {
            needed: init.rank,
            found: stats.len(),
        });
    }
    for s in stats {
        init.check_stats(s)?;
    }
    let mut tv = init;
    let r = tv.rank;
    let d = tv.dim;
    let mut history = Vec::with_capacity(iterations + 1);
    for _ in 0..iterations {
        let acc = e_step(&tv, stats);
        history.push(acc.objective);
        for (c, cmat) in acc.c.into_iter().enumerate() {
            if cmat.iter().all(|v| *v == 0.0) {
                continue;
            }
            let chol = cholesky(cmat);
            for i in c * d..(c + 1) * d {
                let rhs = DVector::from_row_slice(&acc.a[i * r..(i + 1) * r]);
                let row = chol.solve(&rhs);
                tv.t[i * r..(i + 1) * r].copy_from_slice(row.as_slice());
            }
        }
    }
    if iterations > 0 {
        history.push(e_step(&tv, stats).objective);
    }
    Ok(TmatrixTraining { tv, history })
}

/// `w₁·w₂ / (‖w₁‖ ‖w₂‖)`.
pub fn cosine_score(w1: &[f64], w2: &[f64]) -> Result<f64, IvectorError> {
    if w1.len() != w2.len() {
        return Err(IvectorError::DimensionMismatch(w1.len(), w2.len()));
    }
    let dot: f64 = w1.iter().zip(w2).map(|(a, b)| a * b).sum();
    let n1 = w1.iter().map(|a| a * a).sum::<f64>().sqrt();
    let n2 = w2.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(IvectorError::ZeroVector);
    }
    Ok((dot / (n1 * n2)).clamp(-1.0, 1.0))
}

/// Trial score of a model against a test i-vector: cosine, except that a
/// zero model i-vector (a model sitting exactly at the background
/// supervector) or a zero test i-vector scores 0.
pub fn trial_score(model: &[f64], test: &[f64]) -> Result<f64, IvectorError> {
    match cosine_score(model, test) {
        Err(IvectorError::ZeroVector) => Ok(0.0),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnrollMode {
    /// Sum the enrollment statistics, then extract once.
    #[default]
    SumStats,
    /// Extract per utterance, average the length-normalized i-vectors and
    /// normalize the mean.
    AverageIvectors,
}

pub fn enroll_ivector(tv: &TotalVariability, stats: &[&GmmStats], mode: EnrollMode) -> Result<IVector, IvectorError> {
    let first = stats.first().ok_or(IvectorError::EmptyEnrollment)?;
    match mode {
        EnrollMode::SumStats => {
            let mut total = (*first).clone();
            for s in &stats[1..] {
                tv.check_stats(s)?;
                total += s;
            }
            extract_ivector(tv, &total)
        }
        EnrollMode::AverageIvectors => {
            let mut mean = vec![0.0; tv.rank];
            for s in stats {
                let w = extract_ivector(tv, s)?.w;
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    mean.iter_mut().zip(&w).for_each(|(m, v)| *m += v / norm);
                }
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                mean.iter_mut().for_each(|m| *m /= norm);
            }
            Ok(IVector {
                w: mean,
                precision: None,
            })
        }
    }
}
