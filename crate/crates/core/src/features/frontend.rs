use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureError, FeatureKind, FeatureMatrix, FrontendConfig};
use crate::corpus_io::Waveform;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular mel filters.
pub fn mel_filter_centers(config: &FrontendConfig, sample_rate: u32) -> Vec<f64> {
    let (lo, hi) = band_edges(config, sample_rate);
    let step = (hz_to_mel(hi) - hz_to_mel(lo)) / (config.num_filters + 1) as f64;
    (1..=config.num_filters)
        .map(|m| mel_to_hz(hz_to_mel(lo) + step * m as f64))
        .collect()
}

fn band_edges(config: &FrontendConfig, sample_rate: u32) -> (f64, f64) {
    let nyquist = sample_rate as f64 / 2.0;
    let hi = if config.high_freq > 0.0 {
        config.high_freq.min(nyquist)
    } else {
        nyquist
    };
    (config.low_freq, hi)
}

/// Triangles defined on the mel axis, sampled at FFT bin frequencies.
struct MelBank {
    /// Per filter: first bin index and the weights that follow it.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelBank {
    fn new(config: &FrontendConfig, sample_rate: u32, fft_size: usize) -> Self {
        let (lo, hi) = band_edges(config, sample_rate);
        let mel_lo = hz_to_mel(lo);
        let step = (hz_to_mel(hi) - mel_lo) / (config.num_filters + 1) as f64;
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let num_bins = fft_size / 2 + 1;
        let filters = (0..config.num_filters)
            .map(|m| {
                let left = mel_lo + step * m as f64;
                let center = left + step;
                let right = center + step;
                let mut first = None;
                let mut weights = Vec::new();
                for k in 0..num_bins {
                    let mel = hz_to_mel(k as f64 * bin_hz);
                    let w = if mel > left && mel <= center {
                        (mel - left) / step
                    } else if mel > center && mel < right {
                        (right - mel) / step
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        first.get_or_insert(k);
                        weights.push(w);
                    } else if first.is_some() {
                        break;
                    }
                }
                (first.unwrap_or(0), weights)
            })
            .collect();
        Self { filters }
    }

    fn apply(&self, power: &[f64], floor: f64, out: &mut Vec<f64>) {
        out.clear();
        for (start, weights) in &self.filters {
            let e: f64 = weights.iter().zip(&power[*start..]).map(|(w, p)| w * p).sum();
            out.push(e.max(floor).ln());
        }
    }
}

/// Per-frame log mel energies plus log raw energy, shared by MFCC and FBank.
fn analyze(waveform: &Waveform, config: &FrontendConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>), FeatureError> {
    config.validate()?;
    let sr = waveform.sample_rate();
    let samples = waveform.samples();
    let window = config.window_samples(sr);
    let hop = config.hop_samples(sr);
    let frames = config
        .frame_count(samples.len(), sr)
        .ok_or(FeatureError::UtteranceTooShort {
            samples: samples.len(),
            window,
        })?;
    let fft_size = window.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);
    let bank = MelBank::new(config, sr, fft_size);
    let hamming: Vec<f64> = (0..window)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (window - 1).max(1) as f64).cos())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.dither_seed);

    let mut log_mel = Vec::with_capacity(frames);
    let mut log_energy = Vec::with_capacity(frames);
    let mut frame = vec![0.0f64; window];
    let mut spectrum = vec![Complex::new(0.0, 0.0); fft_size];
    let mut power = vec![0.0f64; fft_size / 2 + 1];
    let mut mel = Vec::with_capacity(config.num_filters);
    for t in 0..frames {
        let start = t * hop;
        for (dst, &s) in frame.iter_mut().zip(&samples[start..start + window]) {
            *dst = s;
        }
        if config.dither > 0.0 {
            for v in frame.iter_mut() {
                *v += config.dither * rng.random_range(-1.0..1.0);
            }
        }
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        log_energy.push(energy.max(config.energy_floor).ln());
        if config.preemphasis > 0.0 {
            for n in (1..window).rev() {
                frame[n] -= config.preemphasis * frame[n - 1];
            }
            frame[0] -= config.preemphasis * frame[0];
        }
        for (n, c) in spectrum.iter_mut().enumerate() {
            *c = if n < window {
                Complex::new(frame[n] * hamming[n], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut spectrum);
        for (p, c) in power.iter_mut().zip(&spectrum) {
            *p = c.norm_sqr();
        }
        bank.apply(&power, config.energy_floor, &mut mel);
        log_mel.push(mel.clone());
    }
    Ok((log_mel, log_energy))
}

/// Static MFCCs: cepstra 1..=`num_cepstra` of an orthonormal DCT-II over the
/// log mel energies, followed by the log raw frame energy when enabled.
pub fn compute_mfcc(waveform: &Waveform, config: &FrontendConfig) -> Result<FeatureMatrix, FeatureError> {
    let (log_mel, log_energy) = analyze(waveform, config)?;
    let m = config.num_filters;
    let scale = (2.0 / m as f64).sqrt();
    let dct: Vec<Vec<f64>> = (1..=config.num_cepstra)
        .map(|k| {
            (0..m)
                .map(|j| scale * (PI * k as f64 * (j as f64 + 0.5) / m as f64).cos())
                .collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = log_mel
        .iter()
        .zip(&log_energy)
        .map(|(mel, &e)| {
            let mut row: Vec<f64> = dct
                .iter()
                .map(|basis| basis.iter().zip(mel).map(|(b, x)| b * x).sum())
                .collect();
            if config.include_energy {
                row.push(e);
            }
            row
        })
        .collect();
    Ok(FeatureMatrix::from_rows(&rows, FeatureKind::Mfcc)?.with_frame_shift(config.frame_shift_s))
}

/// Static log mel filterbank energies (no DCT).
pub fn compute_fbank(waveform: &Waveform, config: &FrontendConfig) -> Result<FeatureMatrix, FeatureError> {
    let (log_mel, _) = analyze(waveform, config)?;
    Ok(FeatureMatrix::from_rows(&log_mel, FeatureKind::Fbank)?.with_frame_shift(config.frame_shift_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let w = wave(vec![0.0; 16000]);
        let cfg = FrontendConfig::default();
        assert_eq!(compute_mfcc(&w, &cfg).unwrap().num_frames(), 98);
        assert_eq!(compute_fbank(&w, &cfg).unwrap().num_frames(), 98);
    }

    #[test]
    fn static_dimensions() {
        let w = wave(vec![0.0; 1600]);
        let cfg = FrontendConfig::default();
        assert_eq!(compute_mfcc(&w, &cfg).unwrap().dim(), 20);
        assert_eq!(compute_fbank(&w, &cfg).unwrap().dim(), 40);
    }

    #[test]
    fn zero_signal_gives_constant_frames_at_floor() {
        let w = wave(vec![0.0; 4000]);
        let cfg = FrontendConfig::default();
        let mfcc = compute_mfcc(&w, &cfg).unwrap();
        for row in mfcc.rows() {
            assert_eq!(row, mfcc.row(0));
        }
        let floor = (1e-10f64).ln();
        assert_eq!(mfcc.row(0)[19], floor);
        let fbank = compute_fbank(&w, &cfg).unwrap();
        assert!(fbank.as_slice().iter().all(|&v| v == floor));
    }

    #[test]
    fn too_short_is_rejected() {
        let w = wave(vec![0.1; 399]);
        let err = compute_mfcc(&w, &FrontendConfig::default()).unwrap_err();
        assert_eq!(
            err,
            FeatureError::UtteranceTooShort {
                samples: 399,
                window: 400
            }
        );
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 300.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn dither_is_seeded() {
        let w = wave(vec![0.0; 2000]);
        let cfg = FrontendConfig {
            dither: 1e-4,
            dither_seed: 3,
            ..Default::default()
        };
        let a = compute_mfcc(&w, &cfg).unwrap();
        let b = compute_mfcc(&w, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.row(0), a.row(1));
    }
}
