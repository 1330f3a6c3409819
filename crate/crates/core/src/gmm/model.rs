use super::GmmError;
use crate::math::{log_sum_exp, LN_2PI};

/// Diagonal-covariance Gaussian mixture. Parameters are stored flat
/// (`C × D`, component-major) together with the per-component constants
/// the density code needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    inv_vars: Vec<f64>,
    /// `-½ (D ln 2π + Σ_d ln σ²_cd)`
    gauss_consts: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Gmm {
    /// Builds a mixture from flat `C × D` means and variances.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Result<Self, GmmError> {
        let c = weights.len();
        if c == 0 {
            return Err(GmmError::InvalidModel("mixture has no components".into()));
        }
        if means.len() != c * dim || variances.len() != c * dim {
            return Err(GmmError::InvalidModel(format!(
                "{c} components of dimension {dim} need {} means and variances, got {} and {}",
                c * dim,
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GmmError::InvalidModel("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(GmmError::InvalidModel(format!("weights sum to {total}")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(GmmError::InvalidModel("non-finite mean".into()));
        }
        if variances.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(GmmError::InvalidModel("variances must be finite and positive".into()));
        }
        Ok(Self::from_parts_unchecked(weights, means, variances, dim))
    }

    /// Rescales `weights` to sum to one before building the model.
    pub fn with_normalized_weights(
        mut weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        dim: usize,
    ) -> Result<Self, GmmError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(GmmError::InvalidModel("weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(weights, means, variances, dim)
    }

    pub(crate) fn from_parts_unchecked(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>, dim: usize) -> Self {
        let inv_vars = variances.iter().map(|v| 1.0 / v).collect();
        let gauss_consts = (0..weights.len())
            .map(|c| {
                let log_det: f64 = variances[c * dim..(c + 1) * dim].iter().map(|v| v.ln()).sum();
                -0.5 * (dim as f64 * LN_2PI + log_det)
            })
            .collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self {
            dim,
            weights,
            means,
            variances,
            inv_vars,
            gauss_consts,
            log_weights,
        }
    }

    /// Same weights and variances with new means.
    pub fn with_means(&self, means: Vec<f64>) -> Result<Self, GmmError> {
        if means.len() != self.means.len() {
            return Err(GmmError::ShapeMismatch(format!(
                "expected {} mean values, got {}",
                self.means.len(),
                means.len()
            )));
        }
        let mut out = self.clone();
        out.means = means;
        Ok(out)
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.means[c * self.dim..(c + 1) * self.dim]
    }

    pub fn variance(&self, c: usize) -> &[f64] {
        &self.variances[c * self.dim..(c + 1) * self.dim]
    }

    pub(crate) fn check_dim(&self, frame: &[f64]) -> Result<(), GmmError> {
        if frame.len() != self.dim {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim,
                found: frame.len(),
            });
        }
        Ok(())
    }

    /// `ln N(x | μ_c, Σ_c)` without the mixture weight. No dimension check.
    pub fn component_log_gaussian(&self, c: usize, frame: &[f64]) -> f64 {
        let d = self.dim;
        let mu = &self.means[c * d..(c + 1) * d];
        let iv = &self.inv_vars[c * d..(c + 1) * d];
        let mut q = 0.0;
        for i in 0..d {
            let z = frame[i] - mu[i];
            q += z * z * iv[i];
        }
        self.gauss_consts[c] - 0.5 * q
    }

    /// Fills `out[c] = ln w_c + ln N(x | μ_c, Σ_c)`. No dimension check.
    pub fn weighted_log_densities(&self, frame: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.log_weights[c] + self.component_log_gaussian(c, frame);
        }
    }

    /// `ln Σ_c w_c N(x | μ_c, Σ_c)`.
    pub fn log_likelihood(&self, frame: &[f64]) -> Result<f64, GmmError> {
        self.check_dim(frame)?;
        let mut buf = vec![0.0; self.num_components()];
        self.weighted_log_densities(frame, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// Component posteriors `P(c | x)`.
    pub fn posteriors(&self, frame: &[f64]) -> Result<Vec<f64>, GmmError> {
        self.check_dim(frame)?;
        let mut buf = vec![0.0; self.num_components()];
        self.posteriors_into(frame, &mut buf);
        Ok(buf)
    }

    /// Writes posteriors into `out` and returns the frame log-likelihood.
    /// No dimension check.
    pub fn posteriors_into(&self, frame: &[f64], out: &mut [f64]) -> f64 {
        self.weighted_log_densities(frame, out);
        normalize_log_in_place(out)
    }
}

/// Turns log-scores into probabilities in place and returns their
/// log-sum-exp. All `-inf` input yields a uniform distribution.
pub(crate) fn normalize_log_in_place(values: &mut [f64]) -> f64 {
    let total = log_sum_exp(values);
    if total == f64::NEG_INFINITY {
        let u = 1.0 / values.len() as f64;
        values.iter_mut().for_each(|v| *v = u);
        return total;
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - total).exp();
        sum += *v;
    }
    // Rounding in exp leaves the sum a few ulps away from one.
    values.iter_mut().for_each(|v| *v /= sum);
    total
}

pub fn gmm_log_likelihood(gmm: &Gmm, frame: &[f64]) -> Result<f64, GmmError> {
    gmm.log_likelihood(frame)
}

pub fn gmm_posteriors(gmm: &Gmm, frame: &[f64]) -> Result<Vec<f64>, GmmError> {
    gmm.posteriors(frame)
}
