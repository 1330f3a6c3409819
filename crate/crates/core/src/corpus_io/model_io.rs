//! Binary model container.
//!
//! Layout: 8-byte magic, format version (u32), model kind (u32), section
//! count (u32), a section table of `(tag, offset, length)` entries, the
//! section payloads and a trailing SHA-256 of everything before it. All
//! integers are little-endian; every real is stored as a 64-bit float so
//! parameters round-trip exactly.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::IoError;
use crate::gmm::Gmm;
use crate::hmm::{PhoneHmm, PhoneHmmSet, StateModels};
use crate::ivector::TotalVariability;

pub const MODEL_MAGIC: &[u8; 8] = b"TDSVMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const TAG_INTS: &[u8; 4] = b"INTS";
const TAG_REALS: &[u8; 4] = b"REAL";
const TAG_TEXT: &[u8; 4] = b"TEXT";
const PREAMBLE_LEN: usize = 8 + 4 + 4 + 4;
const ENTRY_LEN: usize = 4 + 8 + 8;
const CHECKSUM_LEN: usize = 32;

/// Every persistable model type.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gmm(Gmm),
    PhoneHmmSet(PhoneHmmSet),
    StateModels(StateModels),
    TotalVariability(TotalVariability),
    /// MAP-adapted GMMs keyed by model id.
    SpeakerGmms(Vec<(String, Gmm)>),
    /// MAP-adapted state models keyed by model id.
    SpeakerStateModels(Vec<(String, StateModels)>),
    /// Enrollment i-vectors keyed by model id.
    Ivectors(Vec<(String, Vec<f64>)>),
}

impl Model {
    fn kind(&self) -> u32 {
        match self {
            Model::Gmm(_) => 1,
            Model::PhoneHmmSet(_) => 2,
            Model::StateModels(_) => 3,
            Model::TotalVariability(_) => 4,
            Model::SpeakerGmms(_) => 5,
            Model::SpeakerStateModels(_) => 6,
            Model::Ivectors(_) => 7,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Gmm(_) => "gmm",
            Model::PhoneHmmSet(_) => "phone-hmm-set",
            Model::StateModels(_) => "state-models",
            Model::TotalVariability(_) => "total-variability",
            Model::SpeakerGmms(_) => "speaker-gmms",
            Model::SpeakerStateModels(_) => "speaker-state-models",
            Model::Ivectors(_) => "ivectors",
        }
    }
}

#[derive(Default)]
struct Encoder {
    ints: Vec<u64>,
    reals: Vec<f64>,
    text: Vec<u8>,
}

impl Encoder {
    fn int(&mut self, v: usize) {
        self.ints.push(v as u64);
    }

    fn reals(&mut self, v: &[f64]) {
        self.reals.extend_from_slice(v);
    }

    fn text(&mut self, s: &str) {
        self.text.extend_from_slice(&(s.len() as u32).to_le_bytes());
        self.text.extend_from_slice(s.as_bytes());
    }

    fn gmm(&mut self, g: &Gmm) {
        self.int(g.num_components());
        self.int(g.dim());
        self.reals(g.weights());
        self.reals(g.means());
        self.reals(g.variances());
    }

    fn state_models(&mut self, m: &StateModels) {
        self.int(m.gmms.len());
        for (g, s) in m.gmms.iter().zip(&m.silence) {
            self.int(usize::from(*s));
            self.gmm(g);
        }
    }

    fn model(&mut self, model: &Model) {
        match model {
            Model::Gmm(g) => self.gmm(g),
            Model::PhoneHmmSet(set) => {
                self.int(set.phones().len());
                for p in set.phones() {
                    self.text(&p.label);
                    self.int(p.states.len());
                    self.reals(&p.self_loop);
                    for g in &p.states {
                        self.gmm(g);
                    }
                }
            }
            Model::StateModels(m) => self.state_models(m),
            Model::TotalVariability(tv) => {
                self.int(tv.dim());
                self.int(tv.rank());
                self.int(tv.rows());
                self.reals(tv.t_matrix());
                self.reals(tv.means());
                self.reals(tv.variances());
            }
            Model::SpeakerGmms(list) => {
                self.int(list.len());
                for (id, g) in list {
                    self.text(id);
                    self.gmm(g);
                }
            }
            Model::SpeakerStateModels(list) => {
                self.int(list.len());
                for (id, m) in list {
                    self.text(id);
                    self.state_models(m);
                }
            }
            Model::Ivectors(list) => {
                self.int(list.len());
                for (id, w) in list {
                    self.text(id);
                    self.int(w.len());
                    self.reals(w);
                }
            }
        }
    }
}

struct Decoder<'a> {
    ints: &'a [u8],
    reals: &'a [u8],
    text: &'a [u8],
}

fn corrupt(msg: impl Into<String>) -> IoError {
    IoError::Corrupt(msg.into())
}

/// Upper bound on any single declared count, to reject absurd sizes before
/// allocating.
const MAX_COUNT: u64 = 1 << 32;

impl Decoder<'_> {
    fn int(&mut self) -> Result<usize, IoError> {
        let (head, rest) = self
            .ints
            .split_at_checked(8)
            .ok_or_else(|| corrupt("integer section exhausted"))?;
        self.ints = rest;
        let v = u64::from_le_bytes(head.try_into().unwrap());
        if v > MAX_COUNT {
            return Err(IoError::DimensionOverflow);
        }
        Ok(v as usize)
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        let bytes = n.checked_mul(8).ok_or(IoError::DimensionOverflow)?;
        let (head, rest) = self
            .reals
            .split_at_checked(bytes)
            .ok_or_else(|| corrupt("real section exhausted"))?;
        self.reals = rest;
        Ok(head
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn text(&mut self) -> Result<String, IoError> {
        let (len, rest) = self
            .text
            .split_at_checked(4)
            .ok_or_else(|| corrupt("text section exhausted"))?;
        let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
        let (s, rest) = rest
            .split_at_checked(len)
            .ok_or_else(|| corrupt("text section exhausted"))?;
        self.text = rest;
        String::from_utf8(s.to_vec()).map_err(|_| corrupt("label is not UTF-8"))
    }

    fn gmm(&mut self) -> Result<Gmm, IoError> {
        let c = self.int()?;
        let d = self.int()?;
        let cd = c.checked_mul(d).ok_or(IoError::DimensionOverflow)?;
        let weights = self.reals(c)?;
        let means = self.reals(cd)?;
        let vars = self.reals(cd)?;
        Gmm::new(weights, means, vars, d).map_err(|e| corrupt(format!("GMM: {e}")))
    }

    fn state_models(&mut self) -> Result<StateModels, IoError> {
        let n = self.int()?;
        let mut gmms = Vec::with_capacity(n.min(1 << 16));
        let mut silence = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            silence.push(self.int()? != 0);
            gmms.push(self.gmm()?);
        }
        StateModels::new(gmms, silence).map_err(|e| corrupt(format!("state models: {e}")))
    }

    fn id_list<T>(
        &mut self,
        mut item: impl FnMut(&mut Self) -> Result<T, IoError>,
    ) -> Result<Vec<(String, T)>, IoError> {
        let n = self.int()?;
        (0..n)
            .map(|_| {
                let id = self.text()?;
                Ok((id, item(self)?))
            })
            .collect()
    }

    fn model(&mut self, kind: u32) -> Result<Model, IoError> {
        Ok(match kind {
            1 => Model::Gmm(self.gmm()?),
            2 => {
                let n = self.int()?;
                let mut phones = Vec::new();
                for _ in 0..n {
                    let label = self.text()?;
                    let states = self.int()?;
                    let self_loop = self.reals(states)?;
                    let gmms = (0..states).map(|_| self.gmm()).collect::<Result<Vec<_>, _>>()?;
                    phones.push(PhoneHmm::new(label, gmms, self_loop).map_err(|e| corrupt(format!("phone: {e}")))?);
                }
                Model::PhoneHmmSet(PhoneHmmSet::new(phones).map_err(|e| corrupt(format!("HMM set: {e}")))?)
            }
            3 => Model::StateModels(self.state_models()?),
            4 => {
                let dim = self.int()?;
                let rank = self.int()?;
                let rows = self.int()?;
                let t = self.reals(rows.checked_mul(rank).ok_or(IoError::DimensionOverflow)?)?;
                let means = self.reals(rows)?;
                let vars = self.reals(rows)?;
                Model::TotalVariability(
                    TotalVariability::new(t, means, vars, dim, rank).map_err(|e| corrupt(format!("T matrix: {e}")))?,
                )
            }
            5 => Model::SpeakerGmms(self.id_list(Self::gmm)?),
            6 => Model::SpeakerStateModels(self.id_list(Self::state_models)?),
            7 => Model::Ivectors(self.id_list(|d| {
                let n = d.int()?;
                d.reals(n)
            })?),
            other => return Err(corrupt(format!("unknown model kind {other}"))),
        })
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut enc = Encoder::default();
    enc.model(model);
    let ints: Vec<u8> = enc.ints.iter().flat_map(|v| v.to_le_bytes()).collect();
    let reals: Vec<u8> = enc.reals.iter().flat_map(|v| v.to_le_bytes()).collect();
    let sections: [(&[u8; 4], &[u8]); 3] = [(TAG_INTS, &ints), (TAG_REALS, &reals), (TAG_TEXT, &enc.text)];

    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&model.kind().to_le_bytes());
    buf.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = (PREAMBLE_LEN + sections.len() * ENTRY_LEN) as u64;
    for (tag, data) in &sections {
        buf.extend_from_slice(*tag);
        buf.extend_from_slice(&offset.to_le_bytes());
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        offset += data.len() as u64;
    }
    for (_, data) in &sections {
        buf.extend_from_slice(data);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, IoError> {
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN + CHECKSUM_LEN {
        return Err(IoError::Truncated {
            expected: PREAMBLE_LEN + CHECKSUM_LEN,
            actual: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != MODEL_FORMAT_VERSION {
        return Err(IoError::VersionMismatch {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let kind = u32_at(12);
    let count = u32_at(16) as usize;
    let body_end = bytes.len() - CHECKSUM_LEN;
    let table_end = PREAMBLE_LEN + count * ENTRY_LEN;
    if table_end > body_end {
        return Err(IoError::Truncated {
            expected: table_end + CHECKSUM_LEN,
            actual: bytes.len(),
        });
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(corrupt("checksum mismatch"));
    }
    let mut ints: &[u8] = &[];
    let mut reals: &[u8] = &[];
    let mut text: &[u8] = &[];
    for k in 0..count {
        let e = PREAMBLE_LEN + k * ENTRY_LEN;
        let tag = &bytes[e..e + 4];
        let offset = u64::from_le_bytes(bytes[e + 4..e + 12].try_into().unwrap());
        let len = u64::from_le_bytes(bytes[e + 12..e + 20].try_into().unwrap());
        let end = offset.checked_add(len).ok_or(IoError::DimensionOverflow)?;
        if offset < table_end as u64 || end > body_end as u64 {
            return Err(corrupt(format!("section {k} lies outside the payload")));
        }
        let data = &bytes[offset as usize..end as usize];
        match tag {
            t if t == TAG_INTS => ints = data,
            t if t == TAG_REALS => reals = data,
            t if t == TAG_TEXT => text = data,
            // Unknown sections are skipped.
            _ => {}
        }
    }
    let mut dec = Decoder { ints, reals, text };
    let model = dec.model(kind)?;
    if !(dec.ints.is_empty() && dec.reals.is_empty() && dec.text.is_empty()) {
        return Err(corrupt("unconsumed section data"));
    }
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<(), IoError> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| IoError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, IoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode_model(&bytes)
}
