//! Corpus storage, weighted scheduling and admission.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::outcome::{Outcome, OutcomeKind};
use crate::spec::BlockId;
use crate::testcase::Testcase;

/// What an execution ended with, minus crash details.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    Completed,
    Bail { index: usize },
    Crash { index: usize },
    Hang,
}

impl From<&OutcomeKind> for Summary {
    fn from(k: &OutcomeKind) -> Self {
        match k {
            OutcomeKind::Completed => Summary::Completed,
            OutcomeKind::Bail { index } => Summary::Bail { index: *index },
            OutcomeKind::Crash { index, .. } => Summary::Crash { index: *index },
            OutcomeKind::Hang => Summary::Hang,
        }
    }
}

impl Summary {
    pub fn as_outcome_kind(&self) -> Option<OutcomeKind> {
        match *self {
            Summary::Completed => Some(OutcomeKind::Completed),
            Summary::Bail { index } => Some(OutcomeKind::Bail { index }),
            _ => None,
        }
    }
}

/// Why an entry was let in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Admission {
    NewCoverage { new_edges: usize },
    Frontier { depth: usize, previous: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub testcase: Testcase,
    pub summary: Summary,
    pub fingerprint: u64,
    pub edges: usize,
    pub energy: f64,
    pub revision: u64,
    pub admission: Admission,
    /// Execution count when the entry was inserted.
    pub found_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub energy_decay: f64,
    pub energy_floor: f64,
    pub non_bailing_bonus: f64,
    /// The most recently inserted `recency_window` entries get
    /// `recency_bonus`.
    pub recency_window: usize,
    pub recency_bonus: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            energy_decay: 0.95,
            energy_floor: 0.05,
            non_bailing_bonus: 2.0,
            recency_window: 32,
            recency_bonus: 2.0,
        }
    }
}

/// Fixed-point scale for integer scheduling weights.
const WEIGHT_SCALE: f64 = 1e6;

/// Fenwick tree over integer weights.
#[derive(Debug, Clone, Default)]
struct Fenwick {
    tree: Vec<u64>,
    raw: Vec<u64>,
}

impl Fenwick {
    fn push(&mut self, w: u64) {
        self.raw.push(w);
        // node n covers raw[n - lowbit(n) .. n]
        let n = self.raw.len();
        let low = n & n.wrapping_neg();
        self.tree.push(self.raw[n - low..].iter().sum());
    }

    fn set(&mut self, i: usize, w: u64) {
        let old = self.raw[i];
        self.raw[i] = w;
        let mut n = i + 1;
        while n <= self.tree.len() {
            self.tree[n - 1] = self.tree[n - 1] - old + w;
            n += n & n.wrapping_neg();
        }
    }

    fn total(&self) -> u64 {
        let mut n = self.tree.len();
        let mut s = 0;
        while n > 0 {
            s += self.tree[n - 1];
            n -= n & n.wrapping_neg();
        }
        s
    }

    /// Index whose cumulative range contains `target` (< total).
    fn find(&self, mut target: u64) -> usize {
        let mut pos = 0;
        let mut step = self.tree.len().next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= self.tree.len() && self.tree[next - 1] <= target {
                target -= self.tree[next - 1];
                pos = next;
            }
            step >>= 1;
        }
        pos
    }
}

/// Corpus entries plus the global coverage and frontier bookkeeping needed
/// to decide admission.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entries: Vec<CorpusEntry>,
    weights: Fenwick,
    seen: HashSet<u32>,
    frontier: HashMap<BlockId, usize>,
    pub config: ScheduleConfig,
}

impl Corpus {
    pub fn new(config: ScheduleConfig) -> Self {
        Corpus {
            config,
            ..Corpus::default()
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &CorpusEntry {
        &self.entries[i]
    }

    /// Distinct edges seen across admitted executions.
    pub fn edge_count(&self) -> usize {
        self.seen.len()
    }

    /// Deepest bail index recorded for testcases starting with `lead`.
    pub fn frontier_of(&self, lead: BlockId) -> Option<usize> {
        self.frontier.get(&lead).copied()
    }

    fn is_recent(&self, i: usize) -> bool {
        i + self.config.recency_window >= self.entries.len()
    }

    fn weight_of(&self, i: usize) -> u64 {
        let e = &self.entries[i];
        let mut w = e.energy;
        if e.summary == Summary::Completed {
            w *= self.config.non_bailing_bonus;
        }
        if self.is_recent(i) {
            w *= self.config.recency_bonus;
        }
        ((w * WEIGHT_SCALE) as u64).max(1)
    }

    /// Scheduling weight of entry `i` as a real number.
    pub fn weight(&self, i: usize) -> f64 {
        self.weight_of(i) as f64 / WEIGHT_SCALE
    }

    /// Decides whether an execution earns a corpus slot, updating the
    /// coverage and frontier tables either way. Crashes and hangs are never
    /// admitted.
    pub fn admission(&mut self, t: &Testcase, outcome: &Outcome) -> Option<Admission> {
        if matches!(outcome.kind, OutcomeKind::Crash { .. } | OutcomeKind::Hang) {
            return None;
        }
        let new_edges = outcome
            .coverage
            .edges()
            .iter()
            .filter(|e| self.seen.insert(**e))
            .count();
        let mut frontier = None;
        if let (OutcomeKind::Bail { index }, Some(lead)) = (&outcome.kind, t.instances.first()) {
            let prev = self.frontier.get(&lead.block).copied();
            if *index > prev.unwrap_or(0) {
                self.frontier.insert(lead.block, *index);
                frontier = Some(Admission::Frontier {
                    depth: *index,
                    previous: prev,
                });
            }
        }
        if new_edges > 0 {
            Some(Admission::NewCoverage { new_edges })
        } else {
            frontier
        }
    }

    pub fn push(&mut self, entry: CorpusEntry) -> usize {
        let i = self.entries.len();
        self.entries.push(entry);
        let w = self.weight_of(i);
        self.weights.push(w);
        // the entry that just left the recency window
        if let Some(old) = i.checked_sub(self.config.recency_window) {
            let w = self.weight_of(old);
            self.weights.set(old, w);
        }
        i
    }

    /// `admission` followed by insertion of an entry on success.
    pub fn consider(
        &mut self,
        t: &Testcase,
        outcome: &Outcome,
        revision: u64,
        found_at: u64,
    ) -> Option<usize> {
        let admission = self.admission(t, outcome)?;
        log::debug!("admit {:?} ({} instances, {})", admission, t.len(), outcome.kind);
        Some(self.push(CorpusEntry {
            testcase: t.clone(),
            summary: Summary::from(&outcome.kind),
            fingerprint: outcome.coverage.fingerprint(),
            edges: outcome.coverage.len(),
            energy: 1.0,
            revision,
            admission,
            found_at,
        }))
    }

    /// Weighted draw; decays the chosen entry's energy.
    pub fn schedule<R: Rng>(&mut self, rng: &mut R) -> Option<usize> {
        let total = self.weights.total();
        if total == 0 {
            return None;
        }
        let i = self.weights.find(rng.gen_range(0..total));
        let e = &mut self.entries[i];
        e.energy = (e.energy * self.config.energy_decay).max(self.config.energy_floor);
        let w = self.weight_of(i);
        self.weights.set(i, w);
        Some(i)
    }

    pub fn into_entries(self) -> Vec<CorpusEntry> {
        self.entries
    }
}

impl crate::mutation::CorpusView for Corpus {
    fn len(&self) -> usize {
        self.entries.len()
    }
    fn get(&self, i: usize) -> &Testcase {
        &self.entries[i].testcase
    }
}
