//! Acoustic front-end: MFCC and log mel filterbank features, regression
//! deltas, per-utterance CMVN and tandem concatenation with externally
//! supplied features.

mod cmvn;
mod deltas;
mod frontend;
mod matrix;

pub use cmvn::apply_cmvn;
pub use deltas::append_deltas;
pub use frontend::{compute_fbank, compute_mfcc, hz_to_mel, mel_filter_centers, mel_to_hz};
pub use matrix::{FeatureKind, FeatureMatrix, DEFAULT_FRAME_SHIFT};

use crate::corpus_io::Waveform;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("feature matrix has no frames")]
    Empty,
    #[error("feature payload holds {actual} values, shape requires {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("row {frame} has a different dimension than row 0")]
    RaggedRow { frame: usize },
    #[error("non-finite feature value in frame {frame}")]
    NonFinite { frame: usize },
    #[error("utterance has {samples} samples, fewer than one {window}-sample window")]
    UtteranceTooShort { samples: usize, window: usize },
    #[error("frame count mismatch: {left} vs {right}")]
    FrameCountMismatch { left: usize, right: usize },
    #[error("invalid front-end configuration: {0}")]
    InvalidConfig(String),
}

/// Front-end settings. Defaults are 25 ms Hamming windows every 10 ms, 40
/// mel filters over 0–8 kHz, 19 cepstra plus log-energy and ±2 frame deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub num_filters: usize,
    pub num_cepstra: usize,
    pub include_energy: bool,
    pub delta_window: usize,
    pub frame_length_s: f64,
    pub frame_shift_s: f64,
    pub preemphasis: f64,
    pub dither: f64,
    pub dither_seed: u64,
    pub low_freq: f64,
    /// Upper filterbank edge in Hz; `0.0` means Nyquist.
    pub high_freq: f64,
    pub energy_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            num_filters: 40,
            num_cepstra: 19,
            include_energy: true,
            delta_window: 2,
            frame_length_s: 0.025,
            frame_shift_s: 0.010,
            preemphasis: 0.97,
            dither: 0.0,
            dither_seed: 0,
            low_freq: 0.0,
            high_freq: 0.0,
            energy_floor: 1e-10,
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |msg: &str| Err(FeatureError::InvalidConfig(msg.to_string()));
        if self.num_filters == 0 {
            return bad("num_filters must be positive");
        }
        if self.num_cepstra >= self.num_filters {
            return bad("num_cepstra must be smaller than num_filters");
        }
        if !(self.frame_length_s > 0.0 && self.frame_shift_s > 0.0) {
            return bad("frame length and shift must be positive");
        }
        if self.frame_shift_s > self.frame_length_s {
            return bad("frame_shift_s must not exceed frame_length_s");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        if self.dither < 0.0 || self.energy_floor <= 0.0 {
            return bad("dither must be >= 0 and energy_floor > 0");
        }
        if self.low_freq < 0.0 || (self.high_freq != 0.0 && self.high_freq <= self.low_freq) {
            return bad("filterbank edges must satisfy 0 <= low < high");
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length_s * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift_s * sample_rate as f64).round() as usize
    }

    /// Frame count for `samples` input samples, `None` when shorter than a window.
    pub fn frame_count(&self, samples: usize, sample_rate: u32) -> Option<usize> {
        let window = self.window_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        (samples >= window).then(|| (samples - window) / hop + 1)
    }
}

/// Front-end choices for a full extraction run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontendKind {
    Mfcc,
    Fbank,
}

/// Static features → deltas → CMVN, the order used for every stream the
/// models consume.
pub fn extract_features(
    waveform: &Waveform,
    config: &FrontendConfig,
    kind: FrontendKind,
    deltas: bool,
    cmvn: bool,
) -> Result<FeatureMatrix, FeatureError> {
    let mut feats = match kind {
        FrontendKind::Mfcc => compute_mfcc(waveform, config)?,
        FrontendKind::Fbank => compute_fbank(waveform, config)?,
    };
    if deltas {
        feats = append_deltas(&feats, config.delta_window)?;
    }
    if cmvn {
        feats = apply_cmvn(&feats);
    }
    Ok(feats)
}

/// Frame-wise concatenation `[base | external]`.
pub fn tandem_concat(base: &FeatureMatrix, external: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    if base.num_frames() != external.num_frames() {
        return Err(FeatureError::FrameCountMismatch {
            left: base.num_frames(),
            right: external.num_frames(),
        });
    }
    let dim = base.dim() + external.dim();
    let mut data = Vec::with_capacity(base.num_frames() * dim);
    for (a, b) in base.rows().zip(external.rows()) {
        data.extend_from_slice(a);
        data.extend_from_slice(b);
    }
    Ok(FeatureMatrix::new(base.num_frames(), dim, data, FeatureKind::Tandem)?.with_frame_shift(base.frame_shift()))
}
