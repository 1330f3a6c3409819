use std::path::Path;

use super::IoError;

pub const REQUIRED_SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples scaled into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, IoError> {
        if samples.is_empty() {
            return Err(IoError::EmptyAudio);
        }
        if sample_rate != REQUIRED_SAMPLE_RATE {
            return Err(IoError::UnsupportedRate(sample_rate));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads a RIFF/WAVE file holding mono 16-bit PCM at 16 kHz. Other rates are
/// rejected rather than resampled.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, IoError> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => IoError::Io {
            path: path.display().to_string(),
            source: io,
        },
        hound::Error::Unsupported => IoError::UnsupportedEncoding("unsupported WAVE format".into()),
        other => IoError::NotAWav(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(IoError::UnsupportedEncoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(IoError::UnsupportedChannels(spec.channels));
    }
    if spec.sample_rate != REQUIRED_SAMPLE_RATE {
        return Err(IoError::UnsupportedRate(spec.sample_rate));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| IoError::NotAWav(e.to_string()))?;
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit mono PCM; samples are clamped to the representable range.
pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform) -> Result<(), IoError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| IoError::NotAWav(e.to_string());
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in waveform.samples() {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(v).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}
