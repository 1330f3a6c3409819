//! Audio, feature-file, transcript and trial-list IO, model persistence and
//! the synthetic corpus generator.

mod corpus;
mod featfile;
pub mod model_io;
pub mod synth;
mod transcript;
mod trials;
mod wav;

use std::path::Path;

use thiserror::Error;

use crate::features::FeatureError;

pub(crate) use corpus::hex_digest;
pub use corpus::{
    load_corpus, load_experiment, save_experiment, Corpus, Enrollment, Experiment, Utterance, DEFAULT_STREAM,
};
pub use featfile::{
    decode_features, encode_features, read_feature_file, write_feature_file, FEATURE_FORMAT_VERSION, FEATURE_MAGIC,
};
pub use model_io::{load_model, save_model, Model};
pub use synth::{generate_synthetic_corpus, generate_synthetic_experiment, SyntheticSpec, BOTTLENECK_STREAM};
pub use transcript::{format_transcripts, load_transcripts, parse_transcripts, Transcripts};
pub use trials::{format_trials, load_trials, parse_trials, Trial, TrialType};
pub use wav::{read_wav, write_wav, Waveform, REQUIRED_SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a WAV file: {0}")]
    NotAWav(String),
    #[error("unsupported encoding: {0} (need 16-bit PCM)")]
    UnsupportedEncoding(String),
    #[error("unsupported channel count {0} (need mono)")]
    UnsupportedChannels(u16),
    #[error("unsupported sample rate {0} Hz (need 16000)")]
    UnsupportedRate(u32),
    #[error("waveform has no samples")]
    EmptyAudio,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("declared dimensions overflow")]
    DimensionOverflow,
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("value {0} does not fit in f32")]
    ValueOutOfRange(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate utterance `{0}`")]
    DuplicateUtterance(String),
    #[error("unknown utterance `{0}`")]
    MissingUtterance(String),
    #[error("utterance `{utt}` has no `{stream}` feature stream")]
    MissingStream { utt: String, stream: String },
    #[error("utterance `{0}` has no transcript")]
    MissingTranscript(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
