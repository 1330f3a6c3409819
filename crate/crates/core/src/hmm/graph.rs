use super::model::{PhoneHmmSet, STATES_PER_PHONE};
use super::HmmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SilenceSlot {
    Absent,
    Optional,
    Mandatory,
}

/// Where silence blocks are inserted around the transcript units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilencePolicy {
    /// Utterance start and end.
    pub boundary: SilenceSlot,
    /// Between consecutive transcript units.
    pub between: SilenceSlot,
    /// Probability of entering an optional silence block rather than
    /// skipping it.
    pub optional_prob: f64,
}

impl Default for SilencePolicy {
    fn default() -> Self {
        Self {
            boundary: SilenceSlot::Mandatory,
            between: SilenceSlot::Optional,
            optional_prob: 0.5,
        }
    }
}

impl SilencePolicy {
    pub fn none() -> Self {
        Self {
            boundary: SilenceSlot::Absent,
            between: SilenceSlot::Absent,
            optional_prob: 0.5,
        }
    }
}

/// One emitting state of a composite graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphState {
    /// Global state id in the phone set.
    pub state_id: usize,
    pub silence: bool,
    /// Member of an optional silence block.
    pub optional: bool,
}

/// Left-to-right emitting-state graph. Arcs are stored per destination,
/// sources ascending, self-loops included.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeHmm {
    pub states: Vec<GraphState>,
    /// `(state, ln P(start in state))`.
    pub entry: Vec<(usize, f64)>,
    /// `incoming[j]` lists `(i, ln a_ij)`.
    pub incoming: Vec<Vec<(usize, f64)>>,
    /// States in which a path may end; the exit itself is not scored.
    pub finals: Vec<usize>,
}

impl CompositeHmm {
    /// Builds a graph from explicit parts. Arcs must go from lower to higher
    /// state indices apart from self-loops.
    pub fn from_parts(
        states: Vec<GraphState>,
        entry: Vec<(usize, f64)>,
        mut incoming: Vec<Vec<(usize, f64)>>,
        finals: Vec<usize>,
    ) -> Result<Self, HmmError> {
        let n = states.len();
        if n == 0 || incoming.len() != n || entry.is_empty() || finals.is_empty() {
            return Err(HmmError::InvalidModel("graph needs states, entries and finals".into()));
        }
        for (j, arcs) in incoming.iter_mut().enumerate() {
            if arcs.iter().any(|&(i, _)| i > j) {
                return Err(HmmError::InvalidModel(format!("backward arc into state {j}")));
            }
            arcs.sort_by_key(|&(i, _)| i);
        }
        if entry.iter().chain(incoming.iter().flatten()).any(|&(i, _)| i >= n) || finals.iter().any(|&f| f >= n) {
            return Err(HmmError::InvalidModel("arc refers to a missing state".into()));
        }
        Ok(Self {
            states,
            entry,
            incoming,
            finals,
        })
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Fewest frames any complete path needs.
    pub fn min_frames(&self) -> usize {
        let n = self.states.len();
        let mut dist = vec![usize::MAX; n];
        for &(s, lp) in &self.entry {
            if lp > f64::NEG_INFINITY {
                dist[s] = 1;
            }
        }
        // States are topologically ordered, so one pass suffices.
        for j in 0..n {
            for &(i, lp) in &self.incoming[j] {
                if i != j && lp > f64::NEG_INFINITY && dist[i] != usize::MAX {
                    dist[j] = dist[j].min(dist[i] + 1);
                }
            }
        }
        self.finals.iter().map(|&f| dist[f]).min().unwrap_or(usize::MAX)
    }

    pub fn mandatory_states(&self) -> Vec<usize> {
        (0..self.states.len()).filter(|&j| !self.states[j].optional).collect()
    }
}

struct Block {
    phone: usize,
    optional: bool,
}

/// Concatenates phone models along `transcript`, inserting silence blocks
/// according to `policy`.
pub fn build_composite_graph(
    hmm_set: &PhoneHmmSet,
    transcript: &[String],
    policy: &SilencePolicy,
) -> Result<CompositeHmm, HmmError> {
    if transcript.is_empty() {
        return Err(HmmError::EmptyTranscript);
    }
    if !(policy.optional_prob > 0.0 && policy.optional_prob < 1.0) {
        return Err(HmmError::InvalidConfig(
            "optional silence probability must lie in (0, 1)".into(),
        ));
    }
    let sil = hmm_set.silence_index();
    let mut blocks = Vec::new();
    let push_sil = |blocks: &mut Vec<Block>, slot: SilenceSlot| match slot {
        SilenceSlot::Absent => {}
        SilenceSlot::Optional => blocks.push(Block {
            phone: sil,
            optional: true,
        }),
        SilenceSlot::Mandatory => blocks.push(Block {
            phone: sil,
            optional: false,
        }),
    };
    push_sil(&mut blocks, policy.boundary);
    for (k, label) in transcript.iter().enumerate() {
        let phone = hmm_set
            .phone_index(label)
            .ok_or_else(|| HmmError::UnknownPhone(label.clone()))?;
        if k > 0 {
            push_sil(&mut blocks, policy.between);
        }
        blocks.push(Block { phone, optional: false });
    }
    push_sil(&mut blocks, policy.boundary);

    let q = policy.optional_prob;
    // Entry distribution over blocks starting at `b`, skipping optional ones.
    // `None` in the result marks reaching the end of the graph.
    let entries_from = |b: usize| -> Vec<(Option<usize>, f64)> {
        let mut out = Vec::new();
        let mut mass = 1.0;
        let mut k = b;
        loop {
            if k >= blocks.len() {
                out.push((None, mass));
                return out;
            }
            if blocks[k].optional {
                out.push((Some(k), mass * q));
                mass *= 1.0 - q;
                k += 1;
            } else {
                out.push((Some(k), mass));
                return out;
            }
        }
    };

    let n = blocks.len() * STATES_PER_PHONE;
    let mut states = Vec::with_capacity(n);
    for b in &blocks {
        for s in 0..STATES_PER_PHONE {
            states.push(GraphState {
                state_id: b.phone * STATES_PER_PHONE + s,
                silence: b.phone == sil,
                optional: b.optional,
            });
        }
    }
    let first = |b: usize| b * STATES_PER_PHONE;
    let entry = entries_from(0)
        .into_iter()
        .filter_map(|(b, p)| b.map(|b| (first(b), p.ln())))
        .collect();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut finals = Vec::new();
    for (bi, b) in blocks.iter().enumerate() {
        let loops = &hmm_set.phones()[b.phone].self_loop;
        for s in 0..STATES_PER_PHONE {
            let j = first(bi) + s;
            incoming[j].push((j, loops[s].ln()));
            if s + 1 < STATES_PER_PHONE {
                incoming[j + 1].push((j, (1.0 - loops[s]).ln()));
            }
        }
        let last = first(bi) + STATES_PER_PHONE - 1;
        let exit = 1.0 - loops[STATES_PER_PHONE - 1];
        for (target, p) in entries_from(bi + 1) {
            match target {
                Some(t) => incoming[first(t)].push((last, (exit * p).ln())),
                None => finals.push(last),
            }
        }
    }
    CompositeHmm::from_parts(states, entry, incoming, finals)
}
