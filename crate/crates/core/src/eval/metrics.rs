use super::{EvalError, ScoreSet};
use crate::corpus_io::TrialType;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl DcfParams {
    pub const MDCF08: DcfParams = DcfParams {
        c_miss: 10.0,
        c_fa: 1.0,
        p_target: 0.01,
    };
    pub const MDCF10: DcfParams = DcfParams {
        c_miss: 1.0,
        c_fa: 1.0,
        p_target: 0.001,
    };

    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.c_miss > 0.0 && self.c_fa > 0.0 && self.c_miss.is_finite() && self.c_fa.is_finite()) {
            return Err(EvalError::InvalidParams("costs must be positive and finite".into()));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(EvalError::InvalidParams(format!(
                "target prior {} is outside (0, 1)",
                self.p_target
            )));
        }
        Ok(())
    }

    /// Cost of the better of the two trivial systems (accept all, reject all).
    pub fn normalizer(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

/// Miss and false-alarm rates when accepting scores `≥ threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

fn check_classes(targets: &[f64], nontargets: &[f64]) -> Result<(), EvalError> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(EvalError::EmptyClass {
            targets: targets.len(),
            nontargets: nontargets.len(),
        });
    }
    Ok(())
}

/// One operating point per distinct observed score, in increasing threshold
/// order, followed by the reject-all point at `+∞`.
pub fn operating_points(targets: &[f64], nontargets: &[f64]) -> Vec<OperatingPoint> {
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|s| (*s, true))
        .chain(nontargets.iter().map(|s| (*s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let nt = targets.len() as f64;
    let nn = nontargets.len() as f64;
    let mut points = Vec::new();
    let (mut below_t, mut below_n) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        points.push(OperatingPoint {
            threshold,
            p_miss: below_t as f64 / nt,
            p_fa: (nontargets.len() - below_n) as f64 / nn,
        });
        while i < all.len() && all[i].0 == threshold {
            if all[i].1 {
                below_t += 1;
            } else {
                below_n += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    points
}

/// Equal error rate from a sequence of operating points with non-decreasing
/// miss and non-increasing false-alarm rates, interpolating linearly
/// between the two points that straddle `p_miss = p_fa`.
pub(crate) fn eer_from_points(points: &[OperatingPoint]) -> f64 {
    let gap = |p: &OperatingPoint| p.p_fa - p.p_miss;
    let k = points
        .iter()
        .position(|p| gap(p) <= 0.0)
        .expect("the reject-all point has p_fa < p_miss");
    let cur = points[k];
    if gap(&cur) == 0.0 || k == 0 {
        return cur.p_miss;
    }
    let prev = points[k - 1];
    let alpha = gap(&prev) / (gap(&prev) - gap(&cur));
    prev.p_miss + alpha * (cur.p_miss - prev.p_miss)
}

pub(crate) fn eer_of(targets: &[f64], nontargets: &[f64]) -> Result<f64, EvalError> {
    check_classes(targets, nontargets)?;
    Ok(eer_from_points(&operating_points(targets, nontargets)))
}

pub(crate) fn mindcf_of(targets: &[f64], nontargets: &[f64], params: &DcfParams) -> Result<f64, EvalError> {
    params.validate()?;
    check_classes(targets, nontargets)?;
    let norm = params.normalizer();
    Ok(operating_points(targets, nontargets)
        .iter()
        .map(|p| (params.c_miss * p.p_miss * params.p_target + params.c_fa * p.p_fa * (1.0 - params.p_target)) / norm)
        .fold(f64::INFINITY, f64::min))
}

/// EER over the records whose trial type is in `filter`.
pub fn compute_eer(scores: &ScoreSet, filter: &[TrialType]) -> Result<f64, EvalError> {
    let (t, n) = scores.split(filter);
    eer_of(&t, &n)
}

/// Normalized minimum detection cost over the records whose trial type is
/// in `filter`.
pub fn compute_mindcf(scores: &ScoreSet, params: &DcfParams, filter: &[TrialType]) -> Result<f64, EvalError> {
    let (t, n) = scores.split(filter);
    mindcf_of(&t, &n, params)
}
