//! Crash deduplication and minimization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mutation::{Graph, Link};
use crate::outcome::{Backend, BackendError, DedupKey, OutcomeKind};
use crate::spec::Specification;
use crate::testcase::{ParamKind, ParamValue, Testcase};

#[derive(Debug, Clone, PartialEq)]
pub struct CrashReport {
    pub key: DedupKey,
    pub original: Testcase,
    pub minimized: Testcase,
    /// Crash index in the minimized testcase.
    pub index: usize,
    pub original_index: usize,
    pub discovered_secs: f64,
    pub discovered_at_exec: u64,
    /// Minimization ran out of budget before reaching a fixed point.
    pub partial: bool,
    pub minimize_execs: u64,
}

impl CrashReport {
    /// A report whose minimized testcase is still the original.
    pub fn unminimized(key: DedupKey, t: Testcase, index: usize, secs: f64, at: u64) -> Self {
        CrashReport {
            key,
            minimized: t.clone(),
            original: t,
            index,
            original_index: index,
            discovered_secs: secs,
            discovered_at_exec: at,
            partial: true,
            minimize_execs: 0,
        }
    }

    pub fn to_json(&self, spec: &Specification) -> serde_json::Value {
        let names = |t: &Testcase| -> Vec<String> {
            t.instances.iter().map(|i| spec.block(i.block).name.clone()).collect()
        };
        serde_json::to_value(ReportJson {
            block: &self.key.block,
            crash_id: &self.key.crash_id,
            index: self.index,
            original_index: self.original_index,
            original_instances: self.original.len(),
            minimized_instances: self.minimized.len(),
            minimized_blocks: names(&self.minimized),
            discovered_secs: self.discovered_secs,
            discovered_at_exec: self.discovered_at_exec,
            partial: self.partial,
            minimize_execs: self.minimize_execs,
        })
        .expect("plain data")
    }
}

#[derive(Serialize, Deserialize)]
struct ReportJson<'a> {
    block: &'a str,
    crash_id: &'a str,
    index: usize,
    original_index: usize,
    original_instances: usize,
    minimized_instances: usize,
    minimized_blocks: Vec<String>,
    discovered_secs: f64,
    discovered_at_exec: u64,
    partial: bool,
    minimize_execs: u64,
}

/// Unique crashes by dedup key.
#[derive(Debug, Clone, Default)]
pub struct CrashLedger {
    reports: BTreeMap<DedupKey, CrashReport>,
}

impl CrashLedger {
    pub fn is_duplicate(&self, key: &DedupKey) -> bool {
        self.reports.contains_key(key)
    }

    /// Inserts unless the key is known; returns whether it was new.
    pub fn record(&mut self, report: CrashReport) -> bool {
        if self.is_duplicate(&report.key) {
            return false;
        }
        self.reports.insert(report.key.clone(), report);
        true
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn reports(&self) -> impl Iterator<Item = &CrashReport> {
        self.reports.values()
    }

    pub fn into_reports(self) -> Vec<CrashReport> {
        self.reports.into_values().collect()
    }
}

/// Result of minimization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minimized {
    pub testcase: Testcase,
    pub index: usize,
    pub partial: bool,
    pub execs: u64,
}

struct Reducer<'a> {
    spec: &'a Specification,
    backend: &'a dyn Backend,
    key: &'a DedupKey,
    budget: u64,
    execs: u64,
}

impl Reducer<'_> {
    /// Crash index if `t` is well formed and still crashes with the key.
    /// `Ok(None)` once the budget is spent.
    fn check(&mut self, t: &Testcase) -> Result<Option<usize>, BackendError> {
        if !t.is_well_formed(self.spec) || self.execs >= self.budget {
            return Ok(None);
        }
        self.execs += 1;
        let out = self.backend.execute(t)?;
        match &out.kind {
            OutcomeKind::Crash { index, .. }
                if DedupKey::of(self.spec, t, &out.kind).as_ref() == Some(self.key) =>
            {
                Ok(Some(*index))
            }
            _ => Ok(None),
        }
    }

    fn exhausted(&self) -> bool {
        self.execs >= self.budget
    }

    /// Candidates for deleting instance `i`: plain removal, then bypasses
    /// that rewire orphaned consumers to the removed instance's inputs of
    /// the same type, then to any free earlier output of that type.
    fn removals(&self, g: &Graph, i: usize) -> Vec<Graph> {
        let removed = &g.nodes[i];
        let mut plain = g.clone();
        plain.remove(i);
        let mut out = vec![plain.clone()];
        let dangling: Vec<(usize, usize, Link)> = g
            .nodes
            .iter()
            .enumerate()
            .flat_map(|(c, n)| {
                n.inputs.iter().enumerate().filter_map(move |(j, l)| match l {
                    Some(l) if l.node == i => Some((c, j, *l)),
                    _ => None,
                })
            })
            .collect();
        if dangling.is_empty() {
            return out;
        }
        let shift = |c: usize| if c > i { c - 1 } else { c };

        let mut bypass = plain.clone();
        let mut used = vec![false; removed.inputs.len()];
        let mut complete = true;
        for &(c, j, l) in &dangling {
            let ty = g.output_type(self.spec, l);
            let src = (0..removed.inputs.len()).find(|&k| {
                !used[k]
                    && removed.inputs[k].is_some()
                    && self.spec.block(removed.block).inputs[k].ty == ty
            });
            match src {
                Some(k) => {
                    used[k] = true;
                    let s = removed.inputs[k].expect("checked");
                    bypass.nodes[shift(c)].inputs[j] = Some(Link {
                        node: shift(s.node),
                        slot: s.slot,
                    });
                }
                None => complete = false,
            }
        }
        if complete {
            out.push(bypass);
        }

        let mut free = plain;
        let mut claimed = Vec::new();
        for &(c, j, l) in &dangling {
            let ty = g.output_type(self.spec, l);
            let cand = free
                .unconsumed_before(self.spec, shift(c), &claimed)
                .into_iter()
                .find(|&(_, t)| t == ty);
            match cand {
                Some((link, _)) => {
                    claimed.push(link);
                    free.nodes[shift(c)].inputs[j] = Some(link);
                }
                None => return out,
            }
        }
        out.push(free);
        out
    }

    fn shrink_candidates(v: &ParamValue) -> Vec<ParamValue> {
        let mut c = Vec::new();
        match v.kind {
            ParamKind::Fixed(_) => {
                if v.bytes.iter().any(|&b| b != 0) {
                    c.push(ParamValue::default_for(v.kind));
                    for (k, &b) in v.bytes.iter().enumerate() {
                        if b != 0 {
                            let mut z = v.clone();
                            z.bytes[k] = 0;
                            c.push(z);
                        }
                    }
                }
            }
            ParamKind::Str | ParamKind::File => {
                let n = v.bytes.len();
                if n > 0 {
                    c.push(ParamValue {
                        kind: v.kind,
                        bytes: Vec::new(),
                    });
                    if n > 1 {
                        let mut h = v.clone();
                        h.bytes.truncate(n / 2);
                        c.push(h);
                        let mut t = v.clone();
                        t.bytes.truncate(n - 1);
                        c.push(t);
                    }
                }
            }
        }
        c
    }
}

/// Shrinks a crashing testcase while it keeps crashing with `key`:
/// trim after the crash, delete instances (with rewiring), shrink
/// parameters, repeat to a fixed point. Every accepted step re-executes.
pub fn minimize(
    spec: &Specification,
    backend: &dyn Backend,
    t: &Testcase,
    key: &DedupKey,
    budget: u64,
) -> Result<Minimized, BackendError> {
    let mut r = Reducer {
        spec,
        backend,
        key,
        budget,
        execs: 0,
    };
    let Some(mut index) = r.check(t)? else {
        return Ok(Minimized {
            testcase: t.clone(),
            index: 0,
            partial: true,
            execs: r.execs,
        });
    };
    let mut cur = t.clone();

    loop {
        let mut changed = false;

        if cur.len() > index + 1 {
            let trimmed = Testcase::new(cur.instances[..=index].to_vec());
            if let Some(i) = r.check(&trimmed)? {
                cur = trimmed;
                index = i;
                changed = true;
            }
        }

        let mut i = cur.len();
        while i > 0 {
            i -= 1;
            if i >= cur.len() || i == index {
                continue;
            }
            let g = Graph::from_testcase(spec, &cur);
            for cand in r.removals(&g, i) {
                let cand = cand.to_testcase(spec);
                if let Some(ci) = r.check(&cand)? {
                    cur = cand;
                    index = ci;
                    changed = true;
                    break;
                }
            }
        }

        for p in 0..cur.len() {
            for j in 0..cur.instances[p].params.values.len() {
                'value: loop {
                    for c in Reducer::shrink_candidates(&cur.instances[p].params.values[j]) {
                        let mut cand = cur.clone();
                        cand.instances[p].params.values[j] = c;
                        if let Some(ci) = r.check(&cand)? {
                            cur = cand;
                            index = ci;
                            changed = true;
                            continue 'value;
                        }
                    }
                    break;
                }
            }
        }

        if r.exhausted() {
            return Ok(Minimized {
                testcase: cur,
                index,
                partial: true,
                execs: r.execs,
            });
        }
        if !changed {
            return Ok(Minimized {
                testcase: cur,
                index,
                partial: false,
                execs: r.execs,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{parse_spec, BlockId};
    use crate::testcase::BlockInstance;
    use crate::vm::VirtualBackend;

    fn spec() -> Specification {
        parse_spec(
            r#"{"types":["Doc"],"blocks":[
            {"name":"new","code":"emit out0 new","outputs":[{"name":"d","type":"Doc"}]},
            {"name":"touch","code":"set_attr in0 t 1\nemit out0 passthrough in0",
             "inputs":[{"name":"d","type":"Doc"}],"outputs":[{"name":"d","type":"Doc"}]},
            {"name":"noise","code":"param n str\ncover 9\nemit out0 passthrough in0",
             "inputs":[{"name":"d","type":"Doc"}],"outputs":[{"name":"d","type":"Doc"}]},
            {"name":"boom","code":"param s str\nbail_if attr_int(in0, t) != 1\ncrash_if len(s) == 3 :b",
             "inputs":[{"name":"d","type":"Doc"}]}]}"#,
        )
        .unwrap()
    }

    fn inst(b: u32, refs: &[u32]) -> BlockInstance {
        BlockInstance::new(BlockId(b), refs.to_vec())
    }

    #[test]
    fn removes_chain_members_and_tail() {
        let spec = spec();
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![
            inst(0, &[]),
            inst(2, &[0]).with_params(vec![ParamValue::str("zz")]),
            inst(1, &[1]),
            inst(0, &[]),
            inst(2, &[2]).with_params(vec![ParamValue::str("q")]),
            inst(3, &[4]).with_params(vec![ParamValue::str("abc")]),
            inst(0, &[]),
        ]);
        let key = DedupKey::new("boom", "b");
        let m = minimize(&spec, &vm, &t, &key, 1000).unwrap();
        assert!(!m.partial);
        let blocks: Vec<u32> = m.testcase.instances.iter().map(|i| i.block.0).collect();
        assert_eq!(blocks, vec![0, 1, 3]);
        assert_eq!(m.index, 2);
        // length 3 is needed; the shrinker never accepts a non-crashing value
        assert_eq!(m.testcase.instances[2].params.values[0].bytes.len(), 3);
    }

    #[test]
    fn minimal_input_is_a_fixed_point() {
        let spec = spec();
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![
            inst(0, &[]),
            inst(1, &[0]),
            inst(3, &[1]).with_params(vec![ParamValue::str("\0\0\0")]),
        ]);
        let m = minimize(&spec, &vm, &t, &DedupKey::new("boom", "b"), 1000).unwrap();
        assert_eq!(m.testcase, t);
        assert!(!m.partial);
    }

    #[test]
    fn budget_exhaustion_is_partial() {
        let spec = spec();
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![
            inst(0, &[]),
            inst(2, &[0]),
            inst(1, &[1]),
            inst(3, &[2]).with_params(vec![ParamValue::str("abc")]),
        ]);
        let m = minimize(&spec, &vm, &t, &DedupKey::new("boom", "b"), 2).unwrap();
        assert!(m.partial);
        assert_eq!(m.execs, 2);
    }

    #[test]
    fn ledger_dedups_on_block_and_id() {
        let mut l = CrashLedger::default();
        let t = Testcase::default();
        assert!(l.record(CrashReport::unminimized(DedupKey::new("a", "x"), t.clone(), 0, 0.0, 0)));
        assert!(!l.record(CrashReport::unminimized(DedupKey::new("a", "x"), t.clone(), 0, 0.0, 0)));
        assert!(l.record(CrashReport::unminimized(DedupKey::new("b", "x"), t, 0, 0.0, 0)));
        assert_eq!(l.len(), 2);
    }
}
