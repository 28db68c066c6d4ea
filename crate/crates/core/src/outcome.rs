//! Results of running a testcase, and the backend interface that produces them.

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::spec::{Specification, TypeId};
use crate::testcase::{ParamKind, ParamValue, Testcase};
use crate::typestate::{ObjectId, TypestateStore};

/// Sorted, duplicate-free set of edge ids hit during one execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Coverage(Vec<u32>);

impl Coverage {
    pub fn from_events(mut events: Vec<u32>) -> Self {
        events.sort_unstable();
        events.dedup();
        Coverage(events)
    }

    pub fn edges(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, edge: u32) -> bool {
        self.0.binary_search(&edge).is_ok()
    }

    /// Stable 64-bit fingerprint of the edge set.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for e in &self.0 {
            h.update(e.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// One entry of the flat object sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LiveObject {
    pub id: ObjectId,
    pub ty: TypeId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuntimeState {
    pub objects: Vec<LiveObject>,
    pub store: TypestateStore,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeKind {
    Completed,
    Bail { index: usize },
    Crash { index: usize, crash_id: Arc<str> },
    /// Native only: the harness exceeded its time limit.
    Hang,
}

impl OutcomeKind {
    pub fn bail_index(&self) -> Option<usize> {
        match self {
            OutcomeKind::Bail { index } => Some(*index),
            _ => None,
        }
    }

    pub fn is_crash(&self) -> bool {
        matches!(self, OutcomeKind::Crash { .. })
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Completed => f.write_str("Completed"),
            OutcomeKind::Bail { index } => write!(f, "Bail@{index}"),
            OutcomeKind::Crash { index, crash_id } => write!(f, "Crash@{index} ({crash_id})"),
            OutcomeKind::Hang => f.write_str("Hang"),
        }
    }
}

/// Parameter shape a block actually requested, recorded when it differed
/// from the instance's stored record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reshape {
    pub instance: usize,
    pub requested: Vec<ParamKind>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub coverage: Coverage,
    /// Present for completed runs of backends that can observe it.
    pub final_state: Option<RuntimeState>,
    pub reshaped: Vec<Reshape>,
}

impl Outcome {
    pub fn completed(coverage: Coverage) -> Self {
        Outcome {
            kind: OutcomeKind::Completed,
            coverage,
            final_state: None,
            reshaped: Vec::new(),
        }
    }
}

/// Unique-bug identity: the block the crash happened in plus the crash id or
/// native signature.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DedupKey {
    pub block: String,
    pub crash_id: String,
}

impl DedupKey {
    pub fn new(block: impl Into<String>, crash_id: impl Into<String>) -> Self {
        DedupKey {
            block: block.into(),
            crash_id: crash_id.into(),
        }
    }

    /// Derives the key for a crashing outcome.
    pub fn of(spec: &Specification, t: &Testcase, kind: &OutcomeKind) -> Option<DedupKey> {
        match kind {
            OutcomeKind::Crash { index, crash_id } => Some(DedupKey::new(
                spec.block(t.instances[*index].block).name.clone(),
                crash_id.to_string(),
            )),
            _ => None,
        }
    }

    /// Filesystem-safe rendering used for crash directories.
    pub fn slug(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
                .take(64)
                .collect()
        };
        format!("{}__{}", clean(&self.block), clean(&self.crash_id))
    }
}

impl fmt::Display for DedupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.crash_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// The backend broke its own obligations (wrong output arity or type).
    /// Always an engine or spec bug, never a finding.
    #[error("backend contract violation in instance {instance} ({block}): {message}")]
    ContractViolation {
        instance: usize,
        block: String,
        message: String,
    },
    #[error("testcase is not executable: {0}")]
    IllFormed(String),
    #[error("infrastructure error: {0}")]
    Infrastructure(String),
}

pub trait Backend: Send + Sync {
    fn execute(&self, t: &Testcase) -> Result<Outcome, BackendError>;

    /// Short label used in logs and reports.
    fn name(&self) -> &str;

    /// Parameter shape of each block when known without executing it.
    fn param_shapes(&self) -> Option<Vec<Vec<ParamKind>>> {
        None
    }
}

/// Rewrites parameter records to the shapes blocks actually requested.
/// Returns `true` when anything changed.
pub fn apply_reshapes(t: &mut Testcase, reshaped: &[Reshape]) -> bool {
    let mut changed = false;
    for r in reshaped {
        let Some(inst) = t.instances.get_mut(r.instance) else {
            continue;
        };
        let values = &mut inst.params.values;
        for (j, &kind) in r.requested.iter().enumerate() {
            match values.get_mut(j) {
                Some(v) if v.kind == kind => {}
                Some(v) => {
                    *v = v.coerce(kind);
                    changed = true;
                }
                None => {
                    values.push(ParamValue::default_for(kind));
                    changed = true;
                }
            }
        }
    }
    changed
}
