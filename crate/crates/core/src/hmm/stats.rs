use std::fmt::Write as _;

use super::align::Alignment;
use super::model::{PhoneHmmSet, StateModels, STATES_PER_PHONE};
use super::HmmError;
use crate::features::FeatureMatrix;
use crate::gmm::{global_moments, map_means, Gmm, GmmStats, MapConfig};
use crate::math::log_sum_exp;

/// `(state, mixture)` statistics flattened in [`StateModels::slot_offsets`]
/// order, so they share the GMM statistics type and feed MAP adaptation and
/// i-vector extraction unchanged.
pub type HmmStats = GmmStats;

fn check_frames(alignment: &Alignment, feats: &FeatureMatrix) -> Result<(), HmmError> {
    if alignment.num_frames() != feats.num_frames() {
        return Err(HmmError::FrameCountMismatch {
            left: alignment.num_frames(),
            right: feats.num_frames(),
        });
    }
    Ok(())
}

fn check_mixture(models: &StateModels, state_id: usize, mixture: usize) -> Result<(), HmmError> {
    let count = models.gmms.get(state_id).map(Gmm::num_components).unwrap_or(0);
    if mixture >= count {
        return Err(HmmError::ShapeMismatch(format!(
            "alignment refers to mixture {mixture} of state {state_id}, which has {count}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReestimateOptions {
    pub variance_floor_ratio: f64,
    /// Weight given to slots whose share of their state's mass falls below
    /// this value; such slots keep the prior mean and variance.
    pub weight_floor: f64,
}

impl Default for ReestimateOptions {
    fn default() -> Self {
        Self {
            variance_floor_ratio: 1e-3,
            weight_floor: 1e-5,
        }
    }
}

/// Per-state GMMs in speaker-feature space from alignments computed on the
/// alignment features. Mixture identities follow the alignment model; the
/// prior for under-populated slots is the global speaker-feature Gaussian.
pub fn reestimate_state_gmms(
    hmm_set: &PhoneHmmSet,
    alignments: &[&Alignment],
    speaker_feats: &[&FeatureMatrix],
    options: &ReestimateOptions,
) -> Result<StateModels, HmmError> {
    if alignments.len() != speaker_feats.len() {
        return Err(HmmError::ShapeMismatch(format!(
            "{} alignments for {} feature matrices",
            alignments.len(),
            speaker_feats.len()
        )));
    }
    let first = speaker_feats
        .first()
        .ok_or_else(|| HmmError::InvalidConfig("no utterances to re-estimate from".into()))?;
    let d = first.dim();
    let layout = hmm_set.state_models();
    let offsets = layout.slot_offsets();
    let slots = layout.num_slots();
    let mut n = vec![0.0; slots];
    let mut s1 = vec![0.0; slots * d];
    let mut pooled = Vec::new();
    for (a, x) in alignments.iter().zip(speaker_feats) {
        check_frames(a, x)?;
        if x.dim() != d {
            return Err(HmmError::DimensionMismatch {
                expected: d,
                found: x.dim(),
            });
        }
        pooled.extend_from_slice(x.as_slice());
        for t in 0..a.num_frames() {
            let row = x.row(t);
            for o in a.frame(t) {
                let sid = a.state_ids[o.state];
                check_mixture(&layout, sid, o.mixture)?;
                let slot = offsets[sid] + o.mixture;
                n[slot] += o.posterior;
                for i in 0..d {
                    s1[slot * d + i] += o.posterior * row[i];
                }
            }
        }
    }
    let mut mean = vec![0.0; slots * d];
    for s in 0..slots {
        if n[s] > 0.0 {
            for i in 0..d {
                mean[s * d + i] = s1[s * d + i] / n[s];
            }
        }
    }
    let mut s2 = vec![0.0; slots * d];
    for (a, x) in alignments.iter().zip(speaker_feats) {
        for t in 0..a.num_frames() {
            let row = x.row(t);
            for o in a.frame(t) {
                let slot = offsets[a.state_ids[o.state]] + o.mixture;
                for i in 0..d {
                    let z = row[i] - mean[slot * d + i];
                    s2[slot * d + i] += o.posterior * z * z;
                }
            }
        }
    }
    let (global_mean, global_var) = global_moments(&pooled, d);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (options.variance_floor_ratio * v).max(1e-10))
        .collect();
    let prior_var: Vec<f64> = global_var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect();

    let mut gmms = Vec::with_capacity(layout.num_states());
    for state in 0..layout.num_states() {
        let (lo, hi) = (offsets[state], offsets[state + 1]);
        let total: f64 = n[lo..hi].iter().sum();
        let mut weights = Vec::with_capacity(hi - lo);
        let mut means = Vec::with_capacity((hi - lo) * d);
        let mut vars = Vec::with_capacity((hi - lo) * d);
        for s in lo..hi {
            let share = if total > 0.0 { n[s] / total } else { 0.0 };
            if share < options.weight_floor {
                weights.push(options.weight_floor);
                means.extend_from_slice(&global_mean);
                vars.extend_from_slice(&prior_var);
            } else {
                weights.push(share);
                means.extend_from_slice(&mean[s * d..(s + 1) * d]);
                vars.extend((0..d).map(|i| (s2[s * d + i] / n[s]).max(floor[i])));
            }
        }
        gmms.push(Gmm::with_normalized_weights(weights, means, vars, d)?);
    }
    StateModels::new(gmms, layout.silence)
}

/// `N_(j,g) = Σ_t P_t(j,g)`, `F_(j,g) = Σ_t P_t(j,g)(x_t − μ_(j,g))` over the
/// slot layout of `models`. Silence states are skipped when
/// `exclude_silence` is set.
pub fn accumulate_hmm_stats(
    alignment: &Alignment,
    speaker_feats: &FeatureMatrix,
    models: &StateModels,
    exclude_silence: bool,
) -> Result<HmmStats, HmmError> {
    check_frames(alignment, speaker_feats)?;
    let d = models.dim();
    if speaker_feats.dim() != d {
        return Err(HmmError::DimensionMismatch {
            expected: d,
            found: speaker_feats.dim(),
        });
    }
    let offsets = models.slot_offsets();
    let mut stats = GmmStats::zeros(models.num_slots(), d);
    for t in 0..alignment.num_frames() {
        let x = speaker_feats.row(t);
        for o in alignment.frame(t) {
            if exclude_silence && alignment.silence[o.state] {
                continue;
            }
            let sid = alignment.state_ids[o.state];
            check_mixture(models, sid, o.mixture)?;
            let slot = offsets[sid] + o.mixture;
            let mu = models.gmms[sid].mean(o.mixture);
            stats.n[slot] += o.posterior;
            let f = &mut stats.f[slot * d..(slot + 1) * d];
            for i in 0..d {
                f[i] += o.posterior * (x[i] - mu[i]);
            }
        }
    }
    Ok(stats)
}

/// Slot-wise mean-only MAP over `(state, mixture)`.
pub fn hmm_map_adapt(models: &StateModels, stats: &HmmStats, config: &MapConfig) -> Result<StateModels, HmmError> {
    config.validate()?;
    if stats.num_components() != models.num_slots() || stats.dim != models.dim() {
        return Err(HmmError::ShapeMismatch(format!(
            "stats {}×{} for {} slots of dimension {}",
            stats.num_components(),
            stats.dim,
            models.num_slots(),
            models.dim()
        )));
    }
    let means = map_means(&models.slot_means(), &stats.n, &stats.f, models.dim(), config.relevance);
    models.with_slot_means(&means)
}

fn check_pair(adapted: &StateModels, background: &StateModels, feats: &FeatureMatrix) -> Result<(), HmmError> {
    if !adapted.same_shape(background) {
        return Err(HmmError::ShapeMismatch(
            "adapted and background state models differ".into(),
        ));
    }
    if feats.dim() != background.dim() {
        return Err(HmmError::DimensionMismatch {
            expected: background.dim(),
            found: feats.dim(),
        });
    }
    Ok(())
}

/// `Σ_t [ln p(x_t | speaker_{q_t}) − ln p(x_t | background_{q_t})]` along
/// the alignment's best path.
pub fn score_hmm_viterbi(
    adapted: &StateModels,
    background: &StateModels,
    alignment: &Alignment,
    speaker_feats: &FeatureMatrix,
    exclude_silence: bool,
) -> Result<f64, HmmError> {
    check_pair(adapted, background, speaker_feats)?;
    check_frames(alignment, speaker_feats)?;
    let path = alignment
        .path
        .as_ref()
        .ok_or_else(|| HmmError::InvalidConfig("alignment carries no state path".into()))?;
    let mut total = 0.0;
    for (t, &j) in path.iter().enumerate() {
        if exclude_silence && alignment.silence[j] {
            continue;
        }
        let sid = alignment.state_ids[j];
        let x = speaker_feats.row(t);
        total += adapted.gmms[sid].log_likelihood(x)? - background.gmms[sid].log_likelihood(x)?;
    }
    Ok(total)
}

/// `Σ_t [ln Σ P_t(j,g) N(x_t | μ̂_(j,g), Σ_(j,g)) − ln Σ P_t(j,g) N(x_t | μ_(j,g), Σ_(j,g))]`.
pub fn score_hmm_fb(
    adapted: &StateModels,
    background: &StateModels,
    alignment: &Alignment,
    speaker_feats: &FeatureMatrix,
    exclude_silence: bool,
) -> Result<f64, HmmError> {
    check_pair(adapted, background, speaker_feats)?;
    check_frames(alignment, speaker_feats)?;
    let mut num = Vec::new();
    let mut den = Vec::new();
    let mut total = 0.0;
    for t in 0..alignment.num_frames() {
        let x = speaker_feats.row(t);
        num.clear();
        den.clear();
        for o in alignment.frame(t) {
            if exclude_silence && alignment.silence[o.state] {
                continue;
            }
            let sid = alignment.state_ids[o.state];
            check_mixture(background, sid, o.mixture)?;
            let lp = o.posterior.ln();
            num.push(lp + adapted.gmms[sid].component_log_gaussian(o.mixture, x));
            den.push(lp + background.gmms[sid].component_log_gaussian(o.mixture, x));
        }
        if !num.is_empty() {
            total += log_sum_exp(&num) - log_sum_exp(&den);
        }
    }
    Ok(total)
}

/// CSV rows `utt_id,frame,state,phone,state_index,posterior`, one per frame
/// and graph state with nonzero mass, preceded by a header.
pub fn alignment_csv(utt_id: &str, alignment: &Alignment, hmm_set: &PhoneHmmSet) -> String {
    let mut out = String::from("utt_id,frame,state,phone,state_index,posterior\n");
    for t in 0..alignment.num_frames() {
        for (j, p) in alignment.state_posteriors(t) {
            let sid = alignment.state_ids[j];
            let phone = &hmm_set.phones()[sid / STATES_PER_PHONE].label;
            let _ = writeln!(out, "{utt_id},{t},{j},{phone},{},{p}", sid % STATES_PER_PHONE);
        }
    }
    out
}
