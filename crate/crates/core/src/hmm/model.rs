use std::collections::HashMap;

use super::HmmError;
use crate::gmm::{Gmm, GmmError};

pub const STATES_PER_PHONE: usize = 3;
pub const SILENCE_LABEL: &str = "sil";

/// Three-state left-to-right phone model without skips.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneHmm {
    pub label: String,
    pub states: Vec<Gmm>,
    /// Self-loop probability per state; the forward arc takes the rest.
    pub self_loop: Vec<f64>,
}

impl PhoneHmm {
    pub fn new(label: impl Into<String>, states: Vec<Gmm>, self_loop: Vec<f64>) -> Result<Self, HmmError> {
        let label = label.into();
        if states.len() != STATES_PER_PHONE || self_loop.len() != STATES_PER_PHONE {
            return Err(HmmError::InvalidModel(format!(
                "phone `{label}` needs {STATES_PER_PHONE} states and self-loop probabilities"
            )));
        }
        if self_loop.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(HmmError::InvalidModel(format!(
                "phone `{label}` self-loop probabilities must lie in (0, 1)"
            )));
        }
        Ok(Self {
            label,
            states,
            self_loop,
        })
    }
}

/// Phone inventory plus silence. Emitting states are numbered globally as
/// `phone_index · 3 + state_index`; that numbering is shared by
/// [`StateModels`] and the statistics super-vector layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneHmmSet {
    phones: Vec<PhoneHmm>,
    silence: usize,
    index: HashMap<String, usize>,
}

impl PhoneHmmSet {
    /// `phones` must contain exactly one model labelled [`SILENCE_LABEL`].
    pub fn new(phones: Vec<PhoneHmm>) -> Result<Self, HmmError> {
        let mut index = HashMap::new();
        for (i, p) in phones.iter().enumerate() {
            if index.insert(p.label.clone(), i).is_some() {
                return Err(HmmError::InvalidModel(format!("duplicate phone `{}`", p.label)));
            }
        }
        let silence = *index
            .get(SILENCE_LABEL)
            .ok_or_else(|| HmmError::InvalidModel(format!("no `{SILENCE_LABEL}` model")))?;
        let dim = phones[0].states[0].dim();
        if phones.iter().flat_map(|p| &p.states).any(|g| g.dim() != dim) {
            return Err(HmmError::InvalidModel("state models differ in dimension".into()));
        }
        Ok(Self { phones, silence, index })
    }

    pub fn phones(&self) -> &[PhoneHmm] {
        &self.phones
    }

    pub fn phone_index(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn silence_index(&self) -> usize {
        self.silence
    }

    pub fn dim(&self) -> usize {
        self.phones[0].states[0].dim()
    }

    pub fn num_states(&self) -> usize {
        self.phones.len() * STATES_PER_PHONE
    }

    /// Speech phones (`F`), silence excluded.
    pub fn num_speech_phones(&self) -> usize {
        self.phones.len() - 1
    }

    pub fn state_gmm(&self, state_id: usize) -> &Gmm {
        &self.phones[state_id / STATES_PER_PHONE].states[state_id % STATES_PER_PHONE]
    }

    pub fn self_loop(&self, state_id: usize) -> f64 {
        self.phones[state_id / STATES_PER_PHONE].self_loop[state_id % STATES_PER_PHONE]
    }

    pub fn is_silence_state(&self, state_id: usize) -> bool {
        state_id / STATES_PER_PHONE == self.silence
    }

    pub fn state_label(&self, state_id: usize) -> (&str, usize) {
        (
            &self.phones[state_id / STATES_PER_PHONE].label,
            state_id % STATES_PER_PHONE,
        )
    }

    /// Sum of mixture counts over every emitting state.
    pub fn total_mixtures(&self) -> usize {
        self.phones
            .iter()
            .flat_map(|p| &p.states)
            .map(Gmm::num_components)
            .sum()
    }

    /// The emission GMMs as a state-indexed model set.
    pub fn state_models(&self) -> StateModels {
        StateModels {
            gmms: (0..self.num_states()).map(|s| self.state_gmm(s).clone()).collect(),
            silence: (0..self.num_states()).map(|s| self.is_silence_state(s)).collect(),
        }
    }
}

/// One GMM per global emitting state. Used for speaker-feature background
/// models and their speaker-adapted counterparts.
#[derive(Debug, Clone, PartialEq)]
pub struct StateModels {
    pub gmms: Vec<Gmm>,
    pub silence: Vec<bool>,
}

impl StateModels {
    pub fn new(gmms: Vec<Gmm>, silence: Vec<bool>) -> Result<Self, HmmError> {
        if gmms.is_empty() || gmms.len() != silence.len() {
            return Err(HmmError::InvalidModel(
                "state models need one silence flag per non-empty GMM list".into(),
            ));
        }
        let dim = gmms[0].dim();
        if gmms.iter().any(|g| g.dim() != dim) {
            return Err(HmmError::InvalidModel("state models differ in dimension".into()));
        }
        Ok(Self { gmms, silence })
    }

    pub fn dim(&self) -> usize {
        self.gmms[0].dim()
    }

    pub fn num_states(&self) -> usize {
        self.gmms.len()
    }

    /// First slot of each state in the flattened `(state, mixture)` layout.
    pub fn slot_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.gmms.len() + 1);
        let mut acc = 0;
        for g in &self.gmms {
            offsets.push(acc);
            acc += g.num_components();
        }
        offsets.push(acc);
        offsets
    }

    pub fn num_slots(&self) -> usize {
        self.gmms.iter().map(Gmm::num_components).sum()
    }

    /// Means of every slot in layout order (`slots × D`).
    pub fn slot_means(&self) -> Vec<f64> {
        self.gmms.iter().flat_map(|g| g.means().iter().copied()).collect()
    }

    pub fn slot_variances(&self) -> Vec<f64> {
        self.gmms.iter().flat_map(|g| g.variances().iter().copied()).collect()
    }

    /// Replaces every slot mean, keeping weights and variances.
    pub fn with_slot_means(&self, means: &[f64]) -> Result<Self, HmmError> {
        let d = self.dim();
        if means.len() != self.num_slots() * d {
            return Err(HmmError::ShapeMismatch(format!(
                "{} mean values for {} slots of dimension {d}",
                means.len(),
                self.num_slots()
            )));
        }
        let offsets = self.slot_offsets();
        let gmms = self
            .gmms
            .iter()
            .enumerate()
            .map(|(s, g)| g.with_means(means[offsets[s] * d..offsets[s + 1] * d].to_vec()))
            .collect::<Result<Vec<_>, GmmError>>()?;
        Ok(Self {
            gmms,
            silence: self.silence.clone(),
        })
    }

    pub(crate) fn same_shape(&self, other: &StateModels) -> bool {
        self.gmms.len() == other.gmms.len()
            && self
                .gmms
                .iter()
                .zip(&other.gmms)
                .all(|(a, b)| a.num_components() == b.num_components() && a.dim() == b.dim())
    }
}
