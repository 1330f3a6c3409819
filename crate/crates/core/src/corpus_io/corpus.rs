use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::featfile::{read_feature_file, write_feature_file};
use super::transcript::{format_transcripts, load_transcripts};
use super::trials::{format_trials, load_trials, strip_comment, Trial};
use super::IoError;
use crate::features::FeatureMatrix;

/// Stream name used when a manifest line gives a bare feature path.
pub const DEFAULT_STREAM: &str = "feat";

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub phrase_id: String,
    pub transcript: Option<Vec<String>>,
    /// Named, frame-synchronous feature streams.
    pub streams: BTreeMap<String, FeatureMatrix>,
}

impl Utterance {
    pub fn stream(&self, name: &str) -> Result<&FeatureMatrix, IoError> {
        self.streams.get(name).ok_or_else(|| IoError::MissingStream {
            utt: self.utt_id.clone(),
            stream: name.to_string(),
        })
    }

    pub fn transcript(&self) -> Result<&[String], IoError> {
        self.transcript
            .as_deref()
            .ok_or_else(|| IoError::MissingTranscript(self.utt_id.clone()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self, IoError> {
        let mut index = HashMap::with_capacity(utterances.len());
        for (i, u) in utterances.iter().enumerate() {
            if index.insert(u.utt_id.clone(), i).is_some() {
                return Err(IoError::DuplicateUtterance(u.utt_id.clone()));
            }
        }
        Ok(Self { utterances, index })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&Utterance> {
        self.index.get(utt_id).map(|&i| &self.utterances[i])
    }

    pub fn require(&self, utt_id: &str) -> Result<&Utterance, IoError> {
        self.get(utt_id)
            .ok_or_else(|| IoError::MissingUtterance(utt_id.to_string()))
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn iter(&self) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter()
    }

    /// Content hash over ids, labels, transcripts and every feature value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for u in &self.utterances {
            h.update(u.utt_id.as_bytes());
            h.update([0]);
            h.update(u.speaker_id.as_bytes());
            h.update([0]);
            h.update(u.phrase_id.as_bytes());
            h.update([0]);
            if let Some(t) = &u.transcript {
                h.update(t.join(" ").as_bytes());
            }
            h.update([1]);
            for (name, m) in &u.streams {
                h.update(name.as_bytes());
                h.update((m.num_frames() as u64).to_le_bytes());
                h.update((m.dim() as u64).to_le_bytes());
                for v in m.as_slice() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Utterances pooled to build one speaker-phrase model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enrollment {
    pub model_id: String,
    pub utt_ids: Vec<String>,
}

/// Everything a verification run consumes: the corpus, the background
/// training subset, the enrollment lists and the trial list.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub corpus: Corpus,
    pub background: Vec<String>,
    pub enrollments: Vec<Enrollment>,
    pub trials: Vec<Trial>,
}

impl Experiment {
    pub fn background_utterances(&self) -> Result<Vec<&Utterance>, IoError> {
        self.background.iter().map(|id| self.corpus.require(id)).collect()
    }
}

const MANIFEST: &str = "manifest.txt";
const TRANSCRIPTS: &str = "transcripts.txt";
const BACKGROUND: &str = "background.txt";
const ENROLL: &str = "enroll.txt";
const TRIALS: &str = "trials.txt";

/// Writes an experiment directory: manifest, transcripts, background list,
/// enrollment list, trial list and one feature file per utterance stream
/// under `feats/`.
pub fn save_experiment(dir: impl AsRef<Path>, exp: &Experiment) -> Result<(), IoError> {
    let dir = dir.as_ref();
    let feats = dir.join("feats");
    std::fs::create_dir_all(&feats).map_err(|e| IoError::io(&feats, e))?;
    let mut manifest = String::from("# utt_id speaker_id phrase_id path [stream=path ...]\n");
    for u in exp.corpus.iter() {
        let _ = write!(manifest, "{} {} {}", u.utt_id, u.speaker_id, u.phrase_id);
        for (name, m) in &u.streams {
            let rel = if name == DEFAULT_STREAM {
                format!("feats/{}.feat", u.utt_id)
            } else {
                format!("feats/{}.{}.feat", u.utt_id, name)
            };
            write_feature_file(dir.join(&rel), m)?;
            if name == DEFAULT_STREAM {
                let _ = write!(manifest, " {rel}");
            } else {
                let _ = write!(manifest, " {name}={rel}");
            }
        }
        manifest.push('\n');
    }
    write_text(dir.join(MANIFEST), &manifest)?;
    let transcripts = format_transcripts(
        exp.corpus
            .iter()
            .filter_map(|u| u.transcript.as_deref().map(|t| (u.utt_id.as_str(), t))),
    );
    write_text(dir.join(TRANSCRIPTS), &transcripts)?;
    write_text(dir.join(BACKGROUND), &(exp.background.join("\n") + "\n"))?;
    let enroll: String = exp
        .enrollments
        .iter()
        .map(|e| format!("{} {}\n", e.model_id, e.utt_ids.join(" ")))
        .collect();
    write_text(dir.join(ENROLL), &enroll)?;
    write_text(dir.join(TRIALS), &format_trials(&exp.trials))
}

pub fn load_experiment(dir: impl AsRef<Path>) -> Result<Experiment, IoError> {
    let dir = dir.as_ref();
    let corpus = load_corpus(dir.join(MANIFEST), Some(dir.join(TRANSCRIPTS)).filter(|p| p.exists()))?;
    let background = read_lines(dir.join(BACKGROUND))?.into_iter().map(|(_, l)| l).collect();
    let enrollments = read_lines(dir.join(ENROLL))?
        .into_iter()
        .map(|(line, l)| {
            let mut f = l.split_whitespace().map(str::to_string);
            let model_id = f.next().unwrap();
            let utt_ids: Vec<String> = f.collect();
            if utt_ids.is_empty() {
                return Err(IoError::Parse {
                    line,
                    message: format!("model `{model_id}` has no enrollment utterances"),
                });
            }
            Ok(Enrollment { model_id, utt_ids })
        })
        .collect::<Result<_, _>>()?;
    let trials = load_trials(dir.join(TRIALS))?;
    Ok(Experiment {
        corpus,
        background,
        enrollments,
        trials,
    })
}

/// Reads a manifest (`utt_id speaker_id phrase_id path [stream=path ...]`,
/// paths relative to the manifest) plus an optional transcript file.
pub fn load_corpus(manifest: impl AsRef<Path>, transcripts: Option<impl AsRef<Path>>) -> Result<Corpus, IoError> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut transcripts = match transcripts {
        Some(p) => load_transcripts(p)?,
        None => Default::default(),
    };
    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (line, l) in read_lines(manifest)? {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(IoError::Parse {
                line,
                message: "expected `utt_id speaker_id phrase_id path`".into(),
            });
        }
        let mut streams = BTreeMap::new();
        for spec in &fields[3..] {
            let (name, rel) = spec.split_once('=').unwrap_or((DEFAULT_STREAM, spec));
            let m = read_feature_file(base.join(rel))?;
            if streams.insert(name.to_string(), m).is_some() {
                return Err(IoError::Parse {
                    line,
                    message: format!("stream `{name}` listed twice"),
                });
            }
        }
        let utt_id = fields[0].to_string();
        if !seen.insert(utt_id.clone()) {
            return Err(IoError::DuplicateUtterance(utt_id));
        }
        utterances.push(Utterance {
            transcript: transcripts.remove(&utt_id),
            utt_id,
            speaker_id: fields[1].to_string(),
            phrase_id: fields[2].to_string(),
            streams,
        });
    }
    Corpus::new(utterances)
}

fn read_lines(path: impl AsRef<Path>) -> Result<Vec<(usize, String)>, IoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l).to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), IoError> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}
