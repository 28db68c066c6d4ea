//! Carrying a corpus across specification revisions.

use std::collections::HashMap;

use thiserror::Error;

use crate::spec::{BlockId, Specification};
use crate::testcase::Testcase;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MigrationError {
    #[error("new spec revision {new} is not newer than {old}")]
    RevisionNotNewer { old: u64, new: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MigrationReport {
    /// Old block names that were edited or removed.
    pub changed_blocks: Vec<String>,
    /// Indices (into the input) of dropped testcases.
    pub dropped_changed: Vec<usize>,
    pub dropped_invalid: Vec<usize>,
}

/// Maps every old block to its new id, or `None` when it was removed or its
/// code text changed.
pub fn block_mapping(old: &Specification, new: &Specification) -> Vec<Option<BlockId>> {
    let by_name: HashMap<&str, BlockId> = new
        .block_ids()
        .map(|b| (new.block(b).name.as_str(), b))
        .collect();
    old.blocks
        .iter()
        .map(|ob| {
            let nb = *by_name.get(ob.name.as_str())?;
            (new.block(nb).body() == ob.body()).then_some(nb)
        })
        .collect()
}

/// Rewrites `t` in terms of `new`'s block ids. `None` if it references a
/// changed block.
pub fn remap(t: &Testcase, mapping: &[Option<BlockId>]) -> Option<Testcase> {
    let mut out = t.clone();
    for inst in &mut out.instances {
        inst.block = (*mapping.get(inst.block.index())?)?;
    }
    Some(out)
}

/// Drops testcases that reference edited or removed blocks, remaps the rest
/// to the new block numbering and drops any that no longer validate.
pub fn migrate_corpus(
    corpus: &[Testcase],
    old: &Specification,
    new: &Specification,
) -> Result<(Vec<Testcase>, MigrationReport), MigrationError> {
    if new.revision <= old.revision {
        return Err(MigrationError::RevisionNotNewer {
            old: old.revision,
            new: new.revision,
        });
    }
    let mapping = block_mapping(old, new);
    let mut report = MigrationReport {
        changed_blocks: old
            .blocks
            .iter()
            .zip(&mapping)
            .filter(|(_, m)| m.is_none())
            .map(|(b, _)| b.name.clone())
            .collect(),
        ..MigrationReport::default()
    };
    let mut kept = Vec::new();
    for (i, t) in corpus.iter().enumerate() {
        match remap(t, &mapping) {
            None => report.dropped_changed.push(i),
            Some(t) if t.is_well_formed(new) => kept.push(t),
            Some(_) => report.dropped_invalid.push(i),
        }
    }
    Ok((kept, report))
}
