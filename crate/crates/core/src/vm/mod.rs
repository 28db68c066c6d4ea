//! Deterministic virtual backend: runs testcases against block programs.
//!
//! Each block's code is a [`Program`]. Programs are compiled once per spec
//! (parameter names resolved to slots, typestate keys interned), then every
//! testcase runs from an empty [`RuntimeState`].

pub mod program;

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::outcome::{
    Backend, BackendError, Coverage, LiveObject, Outcome, OutcomeKind, Reshape, RuntimeState,
};
use crate::spec::{Specification, TypeId};
use crate::testcase::{BlockInstance, ParamKind, Testcase};
use crate::typestate::{typed, Key, KeyTable, ObjectId, TypestateValue, ValueTag};

pub use program::{CmpOp, Cond, Emit, Expr, Instr, ObjRef, ParseError, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("block {block:?}: {source}")]
    Parse { block: String, source: ParseError },
    #[error("block {block:?}: {message}")]
    Invalid { block: String, message: String },
}

#[derive(Debug, Clone)]
enum CExpr {
    Int(i64),
    Str(Vec<u8>),
    Param(usize),
    Ptr(ObjRef),
    Attr(ObjRef, Key, ValueTag),
    Global(Key, ValueTag),
    ToInt(Box<CExpr>),
    Len(Box<CExpr>),
    IntMod(Box<CExpr>, Box<CExpr>),
    Local(Box<CExpr>),
}

#[derive(Debug, Clone)]
struct CCond {
    lhs: CExpr,
    op: CmpOp,
    rhs: CExpr,
}

#[derive(Debug, Clone)]
enum CInstr {
    Param(ParamKind),
    SetAttr(ObjRef, Key, CExpr),
    SetGlobal(Key, CExpr),
    BailIf(CCond),
    CrashIf(CCond, Arc<str>),
    Cover(u32),
    CoverIf(CCond, u32),
    Emit(usize, Emit),
    Bail,
}

#[derive(Debug, Clone)]
struct CompiledBlock {
    name: String,
    instrs: Vec<CInstr>,
    inputs: Vec<TypeId>,
    outputs: Vec<TypeId>,
}

struct Compiler<'a> {
    keys: &'a mut KeyTable,
    params: HashMap<String, usize>,
    n_in: usize,
    n_out: usize,
}

impl Compiler<'_> {
    fn obj(&self, o: ObjRef) -> Result<ObjRef, String> {
        match o {
            ObjRef::In(i) if i >= self.n_in => Err(format!("{o} out of range ({} inputs)", self.n_in)),
            ObjRef::Out(i) if i >= self.n_out => {
                Err(format!("{o} out of range ({} outputs)", self.n_out))
            }
            _ => Ok(o),
        }
    }

    fn key(&mut self, k: &str) -> Result<Key, String> {
        self.keys.intern(k).map_err(|e| e.to_string())
    }

    fn expr(&mut self, e: &Expr) -> Result<CExpr, String> {
        Ok(match e {
            Expr::Int(v) => CExpr::Int(*v),
            Expr::Str(s) => CExpr::Str(s.clone()),
            Expr::Param(name) => CExpr::Param(
                *self
                    .params
                    .get(name)
                    .ok_or_else(|| format!("parameter {name:?} used before its param line"))?,
            ),
            Expr::Ptr(o) => CExpr::Ptr(self.obj(*o)?),
            Expr::Attr(o, k, tag) => CExpr::Attr(self.obj(*o)?, self.key(k)?, *tag),
            Expr::Global(k, tag) => CExpr::Global(self.key(k)?, *tag),
            Expr::ToInt(a) => CExpr::ToInt(Box::new(self.expr(a)?)),
            Expr::Len(a) => CExpr::Len(Box::new(self.expr(a)?)),
            Expr::Local(a) => CExpr::Local(Box::new(self.expr(a)?)),
            Expr::IntMod(a, b) => CExpr::IntMod(Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
        })
    }

    fn cond(&mut self, c: &Cond) -> Result<CCond, String> {
        Ok(CCond {
            lhs: self.expr(&c.lhs)?,
            op: c.op,
            rhs: self.expr(&c.rhs)?,
        })
    }

    fn instr(&mut self, i: &Instr) -> Result<CInstr, String> {
        Ok(match i {
            Instr::Param { name, kind } => {
                let slot = self.params.len();
                if self.params.insert(name.clone(), slot).is_some() {
                    return Err(format!("parameter {name:?} declared twice"));
                }
                CInstr::Param(*kind)
            }
            Instr::SetAttr { obj, key, value } => {
                CInstr::SetAttr(self.obj(*obj)?, self.key(key)?, self.expr(value)?)
            }
            Instr::SetGlobal { key, value } => CInstr::SetGlobal(self.key(key)?, self.expr(value)?),
            Instr::BailIf(c) => CInstr::BailIf(self.cond(c)?),
            Instr::CrashIf(c, id) => CInstr::CrashIf(self.cond(c)?, Arc::from(id.as_str())),
            Instr::Cover(e) => CInstr::Cover(*e),
            Instr::CoverIf(c, e) => CInstr::CoverIf(self.cond(c)?, *e),
            Instr::Emit { slot, source } => {
                self.obj(ObjRef::Out(*slot))?;
                if let Emit::Passthrough(i) = source {
                    self.obj(ObjRef::In(*i))?;
                }
                CInstr::Emit(*slot, source.clone())
            }
            Instr::Bail => CInstr::Bail,
        })
    }
}

/// Block programs for every block of a spec, ready to execute.
#[derive(Debug, Clone)]
pub struct VirtualBackend {
    blocks: Vec<CompiledBlock>,
    keys: KeyTable,
}

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Int(i64),
    Bytes(Vec<u8>),
    Ptr(ObjectId),
}

/// Non-local exits while evaluating an instruction.
enum Stop {
    Bail,
    Crash(Arc<str>),
    Contract(String),
}

/// Result of running one block instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockResult {
    /// Outputs appended to the state.
    Success(Vec<LiveObject>),
    Bail,
    Crash(Arc<str>),
}

struct Frame<'a> {
    inputs: &'a [ObjectId],
    outputs: Vec<Option<ObjectId>>,
    params: Vec<Vec<u8>>,
}

fn le_int(bytes: &[u8]) -> i64 {
    let mut buf = [0u8; 8];
    let n = bytes.len().min(8);
    buf[..n].copy_from_slice(&bytes[..n]);
    i64::from_le_bytes(buf)
}

impl VirtualBackend {
    /// Compiles the block program of every block in `spec`.
    pub fn new(spec: &Specification) -> Result<Self, ProgramError> {
        let mut keys = KeyTable::new();
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for b in &spec.blocks {
            let program = Program::parse(b.body()).map_err(|source| ProgramError::Parse {
                block: b.name.clone(),
                source,
            })?;
            let mut c = Compiler {
                keys: &mut keys,
                params: HashMap::new(),
                n_in: b.inputs.len(),
                n_out: b.outputs.len(),
            };
            let instrs = program
                .instrs
                .iter()
                .map(|i| c.instr(i))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|message| ProgramError::Invalid {
                    block: b.name.clone(),
                    message,
                })?;
            blocks.push(CompiledBlock {
                name: b.name.clone(),
                instrs,
                inputs: b.inputs.iter().map(|p| p.ty).collect(),
                outputs: b.outputs.iter().map(|p| p.ty).collect(),
            });
        }
        Ok(VirtualBackend { blocks, keys })
    }

    pub fn keys(&self) -> &KeyTable {
        &self.keys
    }

    /// Parameter shape of every block, in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<ParamKind>> {
        self.blocks
            .iter()
            .map(|b| {
                b.instrs
                    .iter()
                    .filter_map(|i| match i {
                        CInstr::Param(k) => Some(*k),
                        _ => None,
                    })
                    .collect()
            })
            .collect()
    }

    fn obj(&self, f: &Frame, o: ObjRef) -> Result<ObjectId, Stop> {
        match o {
            ObjRef::In(i) => Ok(f.inputs[i]),
            ObjRef::Out(i) => f.outputs[i]
                .ok_or_else(|| Stop::Contract(format!("{o} used before it was emitted"))),
        }
    }

    fn eval(&self, state: &RuntimeState, f: &Frame, e: &CExpr) -> Result<Val, Stop> {
        let read = |v: Option<&TypestateValue>, tag| -> Result<Val, Stop> {
            match typed(v, tag).map_err(|_| Stop::Bail)? {
                TypestateValue::Int(i) => Ok(Val::Int(*i)),
                TypestateValue::Str(s) => Ok(Val::Bytes(s.clone())),
                TypestateValue::Ptr(p) => Ok(Val::Ptr(*p)),
            }
        };
        Ok(match e {
            CExpr::Int(v) => Val::Int(*v),
            CExpr::Str(s) => Val::Bytes(s.clone()),
            CExpr::Param(i) => Val::Bytes(f.params[*i].clone()),
            CExpr::Ptr(o) => Val::Ptr(self.obj(f, *o)?),
            CExpr::Attr(o, k, tag) => {
                let id = self.obj(f, *o)?;
                let v = state
                    .store
                    .get_attr(id, *k)
                    .map_err(|e| Stop::Contract(e.to_string()))?;
                read(v, *tag)?
            }
            CExpr::Global(k, tag) => read(state.store.get_global(*k), *tag)?,
            CExpr::ToInt(a) => match self.eval(state, f, a)? {
                Val::Int(v) => Val::Int(v),
                Val::Bytes(b) => Val::Int(le_int(&b)),
                Val::Ptr(_) => return Err(Stop::Bail),
            },
            CExpr::Len(a) => match self.eval(state, f, a)? {
                Val::Bytes(b) => Val::Int(b.len() as i64),
                _ => return Err(Stop::Bail),
            },
            CExpr::Local(a) => match self.eval(state, f, a)? {
                Val::Bytes(b) => match b.iter().rposition(|&c| c == b':') {
                    Some(p) => Val::Bytes(b[p + 1..].to_vec()),
                    None => Val::Bytes(b),
                },
                _ => return Err(Stop::Bail),
            },
            CExpr::IntMod(a, b) => {
                let as_int = |v: Val| match v {
                    Val::Int(i) => Ok(i),
                    Val::Bytes(b) => Ok(le_int(&b)),
                    Val::Ptr(_) => Err(Stop::Bail),
                };
                let a = as_int(self.eval(state, f, a)?)?;
                let m = as_int(self.eval(state, f, b)?)?;
                if m <= 0 {
                    return Err(Stop::Bail);
                }
                Val::Int(a.rem_euclid(m))
            }
        })
    }

    fn test(&self, state: &RuntimeState, f: &Frame, c: &CCond) -> Result<bool, Stop> {
        let l = self.eval(state, f, &c.lhs)?;
        let r = self.eval(state, f, &c.rhs)?;
        Ok(match c.op {
            CmpOp::Eq => l == r,
            CmpOp::Ne => l != r,
            CmpOp::Lt => match (l, r) {
                (Val::Int(a), Val::Int(b)) => a < b,
                (Val::Bytes(a), Val::Bytes(b)) => a < b,
                _ => false,
            },
        })
    }

    fn value(&self, state: &RuntimeState, f: &Frame, e: &CExpr) -> Result<TypestateValue, Stop> {
        Ok(match self.eval(state, f, e)? {
            Val::Int(v) => TypestateValue::Int(v),
            Val::Bytes(b) => TypestateValue::Str(b),
            Val::Ptr(p) => TypestateValue::Ptr(p),
        })
    }

    /// Runs one block instance against `state`, which must already hold the
    /// objects its refs point at. On success the outputs are appended to
    /// `state.objects`; after a bail or crash the state is left partially
    /// updated and should be discarded.
    pub fn exec_block(
        &self,
        state: &mut RuntimeState,
        position: usize,
        inst: &BlockInstance,
        coverage: &mut Vec<u32>,
        reshaped: &mut Vec<Reshape>,
    ) -> Result<BlockResult, BackendError> {
        let block = self.blocks.get(inst.block.index()).ok_or_else(|| {
            BackendError::IllFormed(format!("instance {position}: block {} out of range", inst.block))
        })?;
        if inst.refs.len() != block.inputs.len() {
            return Err(BackendError::IllFormed(format!(
                "instance {position}: {} refs for {} inputs",
                inst.refs.len(),
                block.inputs.len()
            )));
        }
        let inputs = resolve(&inst.refs, &state.objects)
            .map_err(|k| BackendError::IllFormed(format!("instance {position}: ref {k} out of range")))?;
        for (j, o) in inputs.iter().enumerate() {
            if o.ty != block.inputs[j] {
                return Err(BackendError::IllFormed(format!(
                    "instance {position}: input {j} has the wrong type"
                )));
            }
        }
        let input_ids: Vec<ObjectId> = inputs.iter().map(|o| o.id).collect();
        let contract = |message: String| BackendError::ContractViolation {
            instance: position,
            block: block.name.clone(),
            message,
        };

        let mut frame = Frame {
            inputs: &input_ids,
            outputs: vec![None; block.outputs.len()],
            params: Vec::new(),
        };
        let mut requested: Vec<ParamKind> = Vec::new();
        let mut mismatch = false;

        let result = (|| -> Result<(), Stop> {
            for instr in &block.instrs {
                match instr {
                    CInstr::Param(kind) => {
                        let idx = requested.len();
                        requested.push(*kind);
                        let bytes = match inst.params.values.get(idx) {
                            Some(v) if v.kind == *kind => v.bytes.clone(),
                            Some(v) => {
                                mismatch = true;
                                v.coerce(*kind).bytes
                            }
                            None => {
                                mismatch = true;
                                crate::testcase::ParamValue::default_for(*kind).bytes
                            }
                        };
                        frame.params.push(bytes);
                    }
                    CInstr::SetAttr(o, k, e) => {
                        let id = self.obj(&frame, *o)?;
                        let v = self.value(state, &frame, e)?;
                        state
                            .store
                            .set_attr(id, *k, v)
                            .map_err(|e| Stop::Contract(e.to_string()))?;
                    }
                    CInstr::SetGlobal(k, e) => {
                        let v = self.value(state, &frame, e)?;
                        state.store.set_global(*k, v);
                    }
                    CInstr::BailIf(c) => {
                        if self.test(state, &frame, c)? {
                            return Err(Stop::Bail);
                        }
                    }
                    CInstr::CrashIf(c, id) => {
                        if self.test(state, &frame, c)? {
                            return Err(Stop::Crash(id.clone()));
                        }
                    }
                    CInstr::Cover(e) => coverage.push(*e),
                    CInstr::CoverIf(c, e) => {
                        if self.test(state, &frame, c)? {
                            coverage.push(*e);
                        }
                    }
                    CInstr::Emit(slot, source) => {
                        if frame.outputs[*slot].is_some() {
                            return Err(Stop::Contract(format!("out{slot} emitted twice")));
                        }
                        let id = match source {
                            Emit::New => state.store.register(),
                            Emit::Passthrough(i) => {
                                if block.inputs[*i] != block.outputs[*slot] {
                                    return Err(Stop::Contract(format!(
                                        "passthrough in{i} -> out{slot} changes the object's type"
                                    )));
                                }
                                let id = frame.inputs[*i];
                                if frame.outputs.contains(&Some(id)) {
                                    return Err(Stop::Contract(format!(
                                        "in{i} passed through to two outputs"
                                    )));
                                }
                                id
                            }
                        };
                        frame.outputs[*slot] = Some(id);
                    }
                    CInstr::Bail => return Err(Stop::Bail),
                }
            }
            Ok(())
        })();

        if mismatch {
            reshaped.push(Reshape {
                instance: position,
                requested,
            });
        }

        match result {
            Ok(()) => {
                let mut produced = Vec::with_capacity(block.outputs.len());
                for (slot, id) in frame.outputs.iter().enumerate() {
                    let id = id.ok_or_else(|| contract(format!("out{slot} was never emitted")))?;
                    produced.push(LiveObject {
                        id,
                        ty: block.outputs[slot],
                    });
                }
                state.objects.extend_from_slice(&produced);
                Ok(BlockResult::Success(produced))
            }
            Err(Stop::Bail) => Ok(BlockResult::Bail),
            Err(Stop::Crash(id)) => Ok(BlockResult::Crash(id)),
            Err(Stop::Contract(m)) => Err(contract(m)),
        }
    }

    /// Runs a testcase from the empty state, stopping at the first bail or
    /// crash.
    pub fn exec_testcase(&self, t: &Testcase) -> Result<Outcome, BackendError> {
        let mut state = RuntimeState::default();
        let mut events = Vec::new();
        let mut reshaped = Vec::new();
        let mut consumed = Vec::new();
        for (i, inst) in t.instances.iter().enumerate() {
            // single-use, checked again at runtime
            consumed.resize(state.objects.len(), false);
            for &k in &inst.refs {
                if let Some(c) = consumed.get_mut(k as usize) {
                    if *c {
                        return Err(BackendError::IllFormed(format!(
                            "instance {i}: object {k} consumed twice"
                        )));
                    }
                    *c = true;
                }
            }
            match self.exec_block(&mut state, i, inst, &mut events, &mut reshaped)? {
                BlockResult::Success(_) => {}
                BlockResult::Bail => {
                    return Ok(Outcome {
                        kind: OutcomeKind::Bail { index: i },
                        coverage: Coverage::from_events(events),
                        final_state: None,
                        reshaped,
                    })
                }
                BlockResult::Crash(crash_id) => {
                    return Ok(Outcome {
                        kind: OutcomeKind::Crash { index: i, crash_id },
                        coverage: Coverage::from_events(events),
                        final_state: None,
                        reshaped,
                    })
                }
            }
        }
        Ok(Outcome {
            kind: OutcomeKind::Completed,
            coverage: Coverage::from_events(events),
            final_state: Some(state),
            reshaped,
        })
    }
}

impl Backend for VirtualBackend {
    fn execute(&self, t: &Testcase) -> Result<Outcome, BackendError> {
        self.exec_testcase(t)
    }

    fn name(&self) -> &str {
        "virtual"
    }

    fn param_shapes(&self) -> Option<Vec<Vec<ParamKind>>> {
        Some(VirtualBackend::param_shapes(self))
    }
}

/// Positional projection of `refs` onto `objects`. Fails with the first
/// out-of-range index.
pub fn resolve<T: Copy>(refs: &[u32], objects: &[T]) -> Result<Vec<T>, u32> {
    refs.iter()
        .map(|&k| objects.get(k as usize).copied().ok_or(k))
        .collect()
}

/// The edge set an outcome reports.
pub fn coverage_of(outcome: &Outcome) -> &Coverage {
    &outcome.coverage
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{parse_spec, BlockId};
    use crate::testcase::ParamValue;

    fn spec_with(blocks: &[(&str, &str, &[&str], &[&str])]) -> Specification {
        let blocks: Vec<String> = blocks
            .iter()
            .map(|(name, code, ins, outs)| {
                let ports = |ps: &[&str], p: &str| {
                    ps.iter()
                        .enumerate()
                        .map(|(i, t)| format!(r#"{{"name":"{p}{i}","type":"{t}"}}"#))
                        .collect::<Vec<_>>()
                        .join(",")
                };
                format!(
                    r#"{{"name":"{name}","code":{},"inputs":[{}],"outputs":[{}]}}"#,
                    serde_json::to_string(code).unwrap(),
                    ports(ins, "i"),
                    ports(outs, "o")
                )
            })
            .collect();
        parse_spec(&format!(
            r#"{{"types":["Doc","Elem"],"blocks":[{}]}}"#,
            blocks.join(",")
        ))
        .unwrap()
    }

    fn inst(b: u32, refs: &[u32]) -> BlockInstance {
        BlockInstance::new(BlockId(b), refs.to_vec())
    }

    #[test]
    fn resolve_projection() {
        let objs = ['a', 'b'];
        assert_eq!(resolve(&[], &objs), Ok(vec![]));
        assert_eq!(resolve(&[1, 0], &objs), Ok(vec!['b', 'a']));
        assert_eq!(resolve(&[2], &objs), Err(2));
    }

    #[test]
    fn new_object_is_appended() {
        let spec = spec_with(&[("mk", "emit 0 new", &[], &["Doc"])]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let out = vm.exec_testcase(&Testcase::new(vec![inst(0, &[])])).unwrap();
        assert_eq!(out.kind, OutcomeKind::Completed);
        let st = out.final_state.unwrap();
        assert_eq!(st.objects.len(), 1);
        assert_eq!(st.objects[0].ty, spec.type_id("Doc").unwrap());
    }

    #[test]
    fn bail_regardless_of_params() {
        let spec = spec_with(&[("b", "param p fixed 1\nbail", &[], &[])]);
        let vm = VirtualBackend::new(&spec).unwrap();
        for byte in [0u8, 1, 255] {
            let t = Testcase::new(vec![inst(0, &[]).with_params(vec![ParamValue::fixed(vec![byte])])]);
            assert_eq!(vm.exec_testcase(&t).unwrap().kind, OutcomeKind::Bail { index: 0 });
        }
    }

    #[test]
    fn crash_on_typestate_clash() {
        let spec = spec_with(&[
            ("mk", "param ns fixed 1\nemit 0 new\nset_attr out0 ns int(ns)", &[], &["Doc"]),
            (
                "use",
                "cover 3\ncrash_if attr_int(in0,\"ns\") == 1 :ns_clash\nemit 0 passthrough 0",
                &["Doc"],
                &["Doc"],
            ),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = |ns: u8| {
            Testcase::new(vec![
                inst(0, &[]).with_params(vec![ParamValue::fixed(vec![ns])]),
                inst(1, &[0]),
            ])
        };
        let out = vm.exec_testcase(&t(1)).unwrap();
        assert_eq!(
            out.kind,
            OutcomeKind::Crash {
                index: 1,
                crash_id: Arc::from("ns_clash")
            }
        );
        assert_eq!(out.coverage.edges(), &[3]);
        assert_eq!(vm.exec_testcase(&t(0)).unwrap().kind, OutcomeKind::Completed);
    }

    #[test]
    fn absent_key_bails() {
        let spec = spec_with(&[
            ("mk", "emit 0 new", &[], &["Doc"]),
            ("read", "bail_if attr_int(in0, ns) == 5\ncover 1", &["Doc"], &[]),
            ("glob", "bail_if global_int(init) == 5", &[], &[]),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0])]);
        assert_eq!(vm.exec_testcase(&t).unwrap().kind, OutcomeKind::Bail { index: 1 });
        let t = Testcase::new(vec![inst(2, &[])]);
        assert_eq!(vm.exec_testcase(&t).unwrap().kind, OutcomeKind::Bail { index: 0 });
    }

    #[test]
    fn tag_mismatch_bails() {
        let spec = spec_with(&[
            ("mk", "emit 0 new\nset_attr out0 k \"x\"", &[], &["Doc"]),
            ("read", "bail_if attr_int(in0, k) == 0", &["Doc"], &[]),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0])]);
        assert_eq!(vm.exec_testcase(&t).unwrap().kind, OutcomeKind::Bail { index: 1 });
    }

    #[test]
    fn globals_persist_across_instances() {
        let spec = spec_with(&[
            ("init", "set_global init 1", &[], &[]),
            ("check", "bail_if global_int(init) != 1\ncover 9", &[], &[]),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let out = vm
            .exec_testcase(&Testcase::new(vec![inst(0, &[]), inst(1, &[])]))
            .unwrap();
        assert_eq!(out.kind, OutcomeKind::Completed);
        assert_eq!(out.coverage.edges(), &[9]);
    }

    #[test]
    fn sequence_rules() {
        let spec = spec_with(&[("ok", "cover 1", &[], &[]), ("no", "bail", &[], &[])]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let empty = vm.exec_testcase(&Testcase::default()).unwrap();
        assert_eq!(empty.kind, OutcomeKind::Completed);
        assert_eq!(empty.final_state, Some(RuntimeState::default()));
        assert_eq!(
            vm.exec_testcase(&Testcase::new(vec![inst(1, &[])])).unwrap().kind,
            OutcomeKind::Bail { index: 0 }
        );
        let later = vm
            .exec_testcase(&Testcase::new(vec![inst(0, &[]), inst(1, &[])]))
            .unwrap();
        assert_eq!(later.kind, OutcomeKind::Bail { index: 1 });
        assert_eq!(later.coverage.edges(), &[1]);
    }

    #[test]
    fn passthrough_keeps_identity_and_typestate() {
        let spec = spec_with(&[
            ("mk", "emit 0 new\nset_attr out0 tag 4", &[], &["Doc"]),
            ("pass", "emit 0 passthrough 0", &["Doc"], &["Doc"]),
            ("check", "bail_if attr_int(in0, tag) != 4\ncover 2", &["Doc"], &[]),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0]), inst(2, &[1])]);
        let out = vm.exec_testcase(&t).unwrap();
        assert_eq!(out.coverage.edges(), &[2]);

        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0])]);
        let st = vm.exec_testcase(&t).unwrap().final_state.unwrap();
        assert_eq!(st.objects[0].id, st.objects[1].id);
    }

    #[test]
    fn contract_violations_are_not_findings() {
        let spec = spec_with(&[
            ("missing", "cover 1", &[], &["Doc"]),
            ("retype", "emit 0 passthrough 0", &["Doc"], &["Elem"]),
            ("early", "set_attr out0 k 1\nemit 0 new", &[], &["Doc"]),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        for t in [
            Testcase::new(vec![inst(0, &[])]),
            Testcase::new(vec![inst(2, &[])]),
        ] {
            assert!(matches!(
                vm.exec_testcase(&t),
                Err(BackendError::ContractViolation { .. })
            ));
        }
    }

    #[test]
    fn compile_errors() {
        let bad_slot = spec_with(&[("b", "emit 1 new", &[], &["Doc"])]);
        assert!(matches!(
            VirtualBackend::new(&bad_slot),
            Err(ProgramError::Invalid { .. })
        ));
        let undeclared = spec_with(&[("b", "cover_if len(p) == 0 1", &[], &[])]);
        assert!(VirtualBackend::new(&undeclared).is_err());
        let syntax = spec_with(&[("b", "emit", &[], &[])]);
        assert!(matches!(
            VirtualBackend::new(&syntax),
            Err(ProgramError::Parse { .. })
        ));
    }

    #[test]
    fn params_are_read_in_order_and_reshaped() {
        let spec = spec_with(&[(
            "p",
            "param a fixed 2\nparam b str\ncover_if int(a) == 258 1\ncover_if b == \"hi\" 2",
            &[],
            &[],
        )]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let full = Testcase::new(vec![inst(0, &[]).with_params(vec![
            ParamValue::fixed(vec![2, 1]),
            ParamValue::str("hi"),
        ])]);
        let out = vm.exec_testcase(&full).unwrap();
        assert_eq!(out.coverage.edges(), &[1, 2]);
        assert!(out.reshaped.is_empty());

        let short = Testcase::new(vec![inst(0, &[])]);
        let out = vm.exec_testcase(&short).unwrap();
        assert!(out.coverage.is_empty());
        assert_eq!(
            out.reshaped,
            vec![Reshape {
                instance: 0,
                requested: vec![ParamKind::Fixed(2), ParamKind::Str]
            }]
        );
    }

    #[test]
    fn modulo_casts_into_range() {
        let spec = spec_with(&[
            ("arr", "param n fixed 1\nemit 0 new\nset_attr out0 size int(n)", &[], &["Doc"]),
            (
                "del",
                "param idx fixed 4\nbail_if attr_int(in0, size) == 0\ncrash_if int_mod(idx, attr_int(in0, size)) < 0 :neg\ncover_if int_mod(idx, attr_int(in0, size)) == 2 5",
                &["Doc"],
                &[],
            ),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = |n: u8, idx: u32| {
            Testcase::new(vec![
                inst(0, &[]).with_params(vec![ParamValue::fixed(vec![n])]),
                inst(1, &[0]).with_params(vec![ParamValue::fixed(idx.to_le_bytes().to_vec())]),
            ])
        };
        assert_eq!(vm.exec_testcase(&t(0, 7)).unwrap().kind, OutcomeKind::Bail { index: 1 });
        assert_eq!(vm.exec_testcase(&t(3, 11)).unwrap().coverage.edges(), &[5]);
        assert!(vm.exec_testcase(&t(3, 10)).unwrap().coverage.is_empty());
    }

    #[test]
    fn local_name() {
        let spec = spec_with(&[(
            "q",
            "param q str\ncover_if local(q) == \"x\" 1",
            &[],
            &[],
        )]);
        let vm = VirtualBackend::new(&spec).unwrap();
        for (v, hit) in [("p:x", true), ("x", true), ("p:y", false), ("a:b:x", true)] {
            let t = Testcase::new(vec![inst(0, &[]).with_params(vec![ParamValue::str(v)])]);
            assert_eq!(vm.exec_testcase(&t).unwrap().coverage.contains(1), hit, "{v}");
        }
    }

    #[test]
    fn rerun_is_identical() {
        let spec = spec_with(&[
            ("mk", "param s str\nemit 0 new\nset_attr out0 s s\ncover 1", &[], &["Doc"]),
            ("use", "cover_if attr_str(in0, s) == \"a\" 2\nemit 0 passthrough 0", &["Doc"], &["Doc"]),
        ]);
        let vm = VirtualBackend::new(&spec).unwrap();
        let t = Testcase::new(vec![
            inst(0, &[]).with_params(vec![ParamValue::str("a")]),
            inst(1, &[0]),
        ]);
        assert_eq!(vm.exec_testcase(&t).unwrap(), vm.exec_testcase(&t).unwrap());
    }
}
