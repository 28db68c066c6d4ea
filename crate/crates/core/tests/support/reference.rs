//! A second, deliberately naive implementation of block programs and of the
//! sequencing rules, written from the language description rather than from
//! the engine's interpreter. Object identities are plain counters and the
//! testcase is executed by literal recursion over the instance list.

use std::collections::{BTreeMap, BTreeSet};

use stitch_core::outcome::{Outcome, OutcomeKind};
use stitch_core::typestate::TypestateValue;
use stitch_core::{ParamKind, Specification, Testcase, TypeId, VirtualBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Obj {
    In(usize),
    Out(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Int,
    Str,
    Ptr,
}

#[derive(Debug, Clone)]
pub enum E {
    Int(i64),
    Str(Vec<u8>),
    Param(String),
    Ptr(Obj),
    Attr(Obj, String, Tag),
    Global(String, Tag),
    ToInt(Box<E>),
    Len(Box<E>),
    Local(Box<E>),
    Mod(Box<E>, Box<E>),
}

#[derive(Debug, Clone, Copy)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
}

#[derive(Debug, Clone)]
pub struct C(E, Cmp, E);

#[derive(Debug, Clone)]
pub enum I {
    Param(String, ParamKind),
    SetAttr(Obj, String, E),
    SetGlobal(String, E),
    BailIf(C),
    CrashIf(C, String),
    Cover(u32),
    CoverIf(C, u32),
    Emit(usize, Option<usize>),
    Bail,
}

// ---------------------------------------------------------------- parsing

#[derive(Debug, Clone, PartialEq)]
enum T {
    Word(String),
    Num(i64),
    Text(Vec<u8>),
    Open,
    Close,
    Comma,
    Cmp(&'static str),
    Label(String),
}

fn tokens(line: &str) -> Vec<T> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '(' {
            out.push(T::Open);
            i += 1;
        } else if c == ')' {
            out.push(T::Close);
            i += 1;
        } else if c == ',' {
            out.push(T::Comma);
            i += 1;
        } else if c == '=' && chars.get(i + 1) == Some(&'=') {
            out.push(T::Cmp("=="));
            i += 2;
        } else if c == '!' && chars.get(i + 1) == Some(&'=') {
            out.push(T::Cmp("!="));
            i += 2;
        } else if c == '<' {
            out.push(T::Cmp("<"));
            i += 1;
        } else if c == ':' {
            let mut s = String::new();
            i += 1;
            while i < chars.len() && !chars[i].is_whitespace() {
                s.push(chars[i]);
                i += 1;
            }
            out.push(T::Label(s));
        } else if c == '"' {
            let mut s = Vec::new();
            i += 1;
            while chars[i] != '"' {
                if chars[i] == '\\' {
                    let e = chars[i + 1];
                    i += 2;
                    match e {
                        'n' => s.push(b'\n'),
                        't' => s.push(b'\t'),
                        '0' => s.push(0),
                        'x' => {
                            let h: String = chars[i..i + 2].iter().collect();
                            s.push(u8::from_str_radix(&h, 16).unwrap());
                            i += 2;
                        }
                        other => s.push(other as u8),
                    }
                } else {
                    let mut buf = [0u8; 4];
                    s.extend_from_slice(chars[i].encode_utf8(&mut buf).as_bytes());
                    i += 1;
                }
            }
            i += 1;
            out.push(T::Text(s));
        } else if c == '-' || c.is_ascii_digit() {
            let mut s = String::new();
            s.push(c);
            i += 1;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                s.push(chars[i]);
                i += 1;
            }
            let (neg, body) = match s.strip_prefix('-') {
                Some(b) => (true, b.to_string()),
                None => (false, s.clone()),
            };
            let v = if let Some(h) = body.strip_prefix("0x") {
                i64::from_str_radix(h, 16).unwrap()
            } else {
                body.parse::<i64>().unwrap()
            };
            out.push(T::Num(if neg { -v } else { v }));
        } else {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                i += 1;
            }
            out.push(T::Word(s));
        }
    }
    out
}

struct P {
    t: Vec<T>,
    at: usize,
}

impl P {
    fn take(&mut self) -> T {
        self.at += 1;
        self.t[self.at - 1].clone()
    }

    fn word(&mut self) -> String {
        match self.take() {
            T::Word(w) => w,
            other => panic!("expected a word, got {other:?}"),
        }
    }

    fn key(&mut self) -> String {
        match self.take() {
            T::Word(w) => w,
            T::Text(s) => String::from_utf8(s).unwrap(),
            other => panic!("expected a key, got {other:?}"),
        }
    }

    fn obj(&mut self) -> Obj {
        let w = self.word();
        if let Some(n) = w.strip_prefix("in") {
            Obj::In(n.parse().unwrap())
        } else {
            Obj::Out(w.strip_prefix("out").unwrap().parse().unwrap())
        }
    }

    fn slot(&mut self, prefix: &str) -> usize {
        match self.take() {
            T::Num(n) => n as usize,
            T::Word(w) => w.strip_prefix(prefix).unwrap().parse().unwrap(),
            other => panic!("expected a slot, got {other:?}"),
        }
    }

    fn num(&mut self) -> i64 {
        match self.take() {
            T::Num(n) => n,
            other => panic!("expected a number, got {other:?}"),
        }
    }

    fn e(&mut self) -> E {
        match self.take() {
            T::Num(n) => E::Int(n),
            T::Text(s) => E::Str(s),
            T::Word(w) => {
                if self.t.get(self.at) != Some(&T::Open) {
                    return E::Param(w);
                }
                self.take();
                let tag = |w: &str| {
                    if w.ends_with("_int") {
                        Tag::Int
                    } else if w.ends_with("_str") {
                        Tag::Str
                    } else {
                        Tag::Ptr
                    }
                };
                let e = match w.as_str() {
                    "ptr" => E::Ptr(self.obj()),
                    "attr_int" | "attr_str" | "attr_ptr" => {
                        let o = self.obj();
                        self.take();
                        E::Attr(o, self.key(), tag(&w))
                    }
                    "global_int" | "global_str" | "global_ptr" => E::Global(self.key(), tag(&w)),
                    "int" => E::ToInt(Box::new(self.e())),
                    "len" => E::Len(Box::new(self.e())),
                    "local" => E::Local(Box::new(self.e())),
                    "int_mod" => {
                        let a = self.e();
                        self.take();
                        E::Mod(Box::new(a), Box::new(self.e()))
                    }
                    other => panic!("unknown function {other}"),
                };
                assert_eq!(self.take(), T::Close);
                e
            }
            other => panic!("expected an expression, got {other:?}"),
        }
    }

    fn c(&mut self) -> C {
        let l = self.e();
        let op = match self.take() {
            T::Cmp("==") => Cmp::Eq,
            T::Cmp("!=") => Cmp::Ne,
            T::Cmp("<") => Cmp::Lt,
            other => panic!("expected a comparison, got {other:?}"),
        };
        C(l, op, self.e())
    }
}

pub fn parse(text: &str) -> Vec<I> {
    let mut prog = Vec::new();
    for line in text.lines() {
        let t = tokens(line);
        if t.is_empty() {
            continue;
        }
        let mut p = P { t, at: 0 };
        let op = p.word();
        prog.push(match op.as_str() {
            "param" => {
                let name = p.word();
                let kind = match p.word().as_str() {
                    "fixed" => ParamKind::Fixed(p.num() as u32),
                    "str" => ParamKind::Str,
                    _ => ParamKind::File,
                };
                I::Param(name, kind)
            }
            "set_attr" => {
                let o = p.obj();
                let k = p.key();
                I::SetAttr(o, k, p.e())
            }
            "set_global" => {
                let k = p.key();
                I::SetGlobal(k, p.e())
            }
            "bail_if" => I::BailIf(p.c()),
            "crash_if" => {
                let c = p.c();
                match p.take() {
                    T::Label(l) => I::CrashIf(c, l),
                    other => panic!("expected a label, got {other:?}"),
                }
            }
            "cover" => I::Cover(p.num() as u32),
            "cover_if" => {
                let c = p.c();
                I::CoverIf(c, p.num() as u32)
            }
            "emit" => {
                let slot = p.slot("out");
                match p.word().as_str() {
                    "new" => I::Emit(slot, None),
                    _ => I::Emit(slot, Some(p.slot("in"))),
                }
            }
            "bail" => I::Bail,
            other => panic!("unknown instruction {other}"),
        });
    }
    prog
}

// -------------------------------------------------------------- semantics

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum V {
    Int(i64),
    Bytes(Vec<u8>),
    Ptr(usize),
}

/// Object list, per-object attributes and globals. Identities are
/// counters; `objects` holds (identity, type) in output order.
#[derive(Debug, Clone, Default)]
pub struct Sigma {
    pub objects: Vec<(usize, TypeId)>,
    pub mo: BTreeMap<usize, BTreeMap<String, V>>,
    pub mg: BTreeMap<String, V>,
    pub next_identity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Kind {
    Completed,
    Bail(usize),
    Crash(usize, String),
}

/// Comparable rendering of an outcome, with object identities renumbered
/// by first appearance in the object list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observed {
    pub kind: Kind,
    pub coverage: BTreeSet<u32>,
    pub requested: Vec<(usize, Vec<ParamKind>)>,
    pub final_state: Option<Final>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Final {
    pub types: Vec<TypeId>,
    pub identity: Vec<usize>,
    pub attrs: BTreeMap<usize, BTreeMap<String, V>>,
    pub globals: BTreeMap<String, V>,
}

enum Step {
    Ok(Sigma),
    Bail,
    Crash(String),
}

struct Block<'a> {
    prog: &'a [I],
    outs: &'a [TypeId],
}

fn le(b: &[u8]) -> i64 {
    let mut buf = [0u8; 8];
    for (i, x) in b.iter().take(8).enumerate() {
        buf[i] = *x;
    }
    i64::from_le_bytes(buf)
}

struct Run<'a> {
    sigma: Sigma,
    inputs: Vec<usize>,
    outputs: Vec<Option<usize>>,
    params: BTreeMap<&'a str, Vec<u8>>,
}

impl<'a> Run<'a> {
    fn who(&self, o: Obj) -> usize {
        match o {
            Obj::In(i) => self.inputs[i],
            Obj::Out(i) => self.outputs[i].expect("generated programs emit before use"),
        }
    }

    fn lookup(m: Option<&BTreeMap<String, V>>, k: &str, tag: Tag) -> Option<V> {
        let v = m?.get(k)?;
        let ok = matches!(
            (v, tag),
            (V::Int(_), Tag::Int) | (V::Bytes(_), Tag::Str) | (V::Ptr(_), Tag::Ptr)
        );
        ok.then(|| v.clone())
    }

    /// `None` means the block bails.
    fn eval(&self, e: &E) -> Option<V> {
        match e {
            E::Int(n) => Some(V::Int(*n)),
            E::Str(s) => Some(V::Bytes(s.clone())),
            E::Param(p) => Some(V::Bytes(self.params[p.as_str()].clone())),
            E::Ptr(o) => Some(V::Ptr(self.who(*o))),
            E::Attr(o, k, tag) => Self::lookup(self.sigma.mo.get(&self.who(*o)), k, *tag),
            E::Global(k, tag) => Self::lookup(Some(&self.sigma.mg), k, *tag),
            E::ToInt(a) => match self.eval(a)? {
                V::Int(n) => Some(V::Int(n)),
                V::Bytes(b) => Some(V::Int(le(&b))),
                V::Ptr(_) => None,
            },
            E::Len(a) => match self.eval(a)? {
                V::Bytes(b) => Some(V::Int(b.len() as i64)),
                _ => None,
            },
            E::Local(a) => match self.eval(a)? {
                V::Bytes(b) => {
                    let cut = b.iter().rposition(|&c| c == b':').map_or(0, |p| p + 1);
                    Some(V::Bytes(b[cut..].to_vec()))
                }
                _ => None,
            },
            E::Mod(a, m) => {
                let int = |v: V| match v {
                    V::Int(n) => Some(n),
                    V::Bytes(b) => Some(le(&b)),
                    V::Ptr(_) => None,
                };
                let a = int(self.eval(a)?)?;
                let m = int(self.eval(m)?)?;
                if m <= 0 {
                    return None;
                }
                Some(V::Int(((a % m) + m) % m))
            }
        }
    }

    fn holds(&self, c: &C) -> Option<bool> {
        let l = self.eval(&c.0)?;
        let r = self.eval(&c.2)?;
        Some(match c.1 {
            Cmp::Eq => l == r,
            Cmp::Ne => l != r,
            Cmp::Lt => match (&l, &r) {
                (V::Int(a), V::Int(b)) => a < b,
                (V::Bytes(a), V::Bytes(b)) => a < b,
                _ => false,
            },
        })
    }
}

/// One block instance against a state. Records coverage and requested shapes.
fn exec_block(
    sigma: &Sigma,
    b: &Block,
    refs: &[u32],
    record: &[stitch_core::ParamValue],
    cover: &mut BTreeSet<u32>,
    requested: &mut Vec<ParamKind>,
    mismatch: &mut bool,
) -> Step {
    // resolve(r, O) = [O[k] | k ∈ r]
    let inputs: Vec<usize> = refs.iter().map(|&k| sigma.objects[k as usize].0).collect();
    let mut run = Run {
        sigma: sigma.clone(),
        inputs,
        outputs: vec![None; b.outs.len()],
        params: BTreeMap::new(),
    };
    for ins in b.prog {
        match ins {
            I::Param(name, kind) => {
                let j = requested.len();
                requested.push(*kind);
                let bytes = match record.get(j) {
                    Some(v) if v.kind == *kind => v.bytes.clone(),
                    Some(v) => {
                        *mismatch = true;
                        let mut b = v.bytes.clone();
                        if let ParamKind::Fixed(w) = kind {
                            b.resize(*w as usize, 0);
                        }
                        b
                    }
                    None => {
                        *mismatch = true;
                        match kind {
                            ParamKind::Fixed(w) => vec![0; *w as usize],
                            _ => Vec::new(),
                        }
                    }
                };
                run.params.insert(name.as_str(), bytes);
            }
            I::SetAttr(o, k, e) => {
                let who = run.who(*o);
                let Some(v) = run.eval(e) else { return Step::Bail };
                run.sigma.mo.entry(who).or_default().insert(k.clone(), v);
            }
            I::SetGlobal(k, e) => {
                let Some(v) = run.eval(e) else { return Step::Bail };
                run.sigma.mg.insert(k.clone(), v);
            }
            I::BailIf(c) => match run.holds(c) {
                Some(false) => {}
                _ => return Step::Bail,
            },
            I::CrashIf(c, id) => match run.holds(c) {
                Some(false) => {}
                Some(true) => return Step::Crash(id.clone()),
                None => return Step::Bail,
            },
            I::Cover(n) => {
                cover.insert(*n);
            }
            I::CoverIf(c, n) => match run.holds(c) {
                Some(true) => {
                    cover.insert(*n);
                }
                Some(false) => {}
                None => return Step::Bail,
            },
            I::Emit(slot, src) => {
                let id = match src {
                    None => {
                        run.sigma.next_identity += 1;
                        run.sigma.next_identity
                    }
                    Some(i) => run.inputs[*i],
                };
                run.outputs[*slot] = Some(id);
            }
            I::Bail => return Step::Bail,
        }
    }
    // every output was emitted; append them in slot order
    let mut s = run.sigma;
    for (slot, ty) in b.outs.iter().enumerate() {
        s.objects.push((run.outputs[slot].expect("every output emitted"), *ty));
    }
    Step::Ok(s)
}

enum Seq {
    Done(Sigma),
    Bail(usize),
    Crash(usize, String),
}

struct Ctx<'a> {
    blocks: Vec<Block<'a>>,
    cover: BTreeSet<u32>,
    requested: Vec<(usize, Vec<ParamKind>)>,
}

/// Runs the list head first: an empty list completes, and the first bail or
/// crash stops the run with its position counted from the head.
fn exec_seq(ctx: &mut Ctx, sigma: Sigma, t: &[stitch_core::BlockInstance], position: usize) -> Seq {
    let Some((head, rest)) = t.split_first() else {
        return Seq::Done(sigma);
    };
    let b = &ctx.blocks[head.block.index()];
    let mut requested = Vec::new();
    let mut mismatch = false;
    let step = exec_block(
        &sigma,
        b,
        &head.refs,
        &head.params.values,
        &mut ctx.cover,
        &mut requested,
        &mut mismatch,
    );
    if mismatch {
        ctx.requested.push((position, requested));
    }
    match step {
        Step::Bail => Seq::Bail(0),
        Step::Crash(id) => Seq::Crash(0, id),
        Step::Ok(next) => match exec_seq(ctx, next, rest, position + 1) {
            Seq::Done(s) => Seq::Done(s),
            Seq::Bail(i) => Seq::Bail(i + 1),
            Seq::Crash(i, id) => Seq::Crash(i + 1, id),
        },
    }
}

pub struct Reference {
    programs: Vec<Vec<I>>,
    outs: Vec<Vec<TypeId>>,
}

impl Reference {
    pub fn new(spec: &Specification) -> Self {
        Reference {
            programs: spec.blocks.iter().map(|b| parse(b.body())).collect(),
            outs: spec.blocks.iter().map(|b| b.outputs.iter().map(|p| p.ty).collect()).collect(),
        }
    }

    pub fn run(&self, t: &Testcase) -> Observed {
        let mut ctx = Ctx {
            blocks: (0..self.programs.len())
                .map(|i| Block {
                    prog: &self.programs[i],
                    outs: &self.outs[i],
                })
                .collect(),
            cover: BTreeSet::new(),
            requested: Vec::new(),
        };
        let (kind, final_state) = match exec_seq(&mut ctx, Sigma::default(), &t.instances, 0) {
            Seq::Done(s) => (Kind::Completed, Some(normalize_ref(&s))),
            Seq::Bail(i) => (Kind::Bail(i), None),
            Seq::Crash(i, id) => (Kind::Crash(i, id), None),
        };
        Observed {
            kind,
            coverage: ctx.cover,
            requested: ctx.requested,
            final_state,
        }
    }
}

fn renumber(ids: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &id in ids {
        let n = m.len();
        m.entry(id).or_insert(n);
    }
    m
}

fn normalize_ref(s: &Sigma) -> Final {
    let ids: Vec<usize> = s.objects.iter().map(|o| o.0).collect();
    let map = renumber(&ids);
    let fix = |v: &V| match v {
        V::Ptr(p) => V::Ptr(map[p]),
        other => other.clone(),
    };
    Final {
        types: s.objects.iter().map(|o| o.1).collect(),
        identity: ids.iter().map(|i| map[i]).collect(),
        attrs: s
            .mo
            .iter()
            .filter(|(_, m)| !m.is_empty())
            .map(|(o, m)| (map[o], m.iter().map(|(k, v)| (k.clone(), fix(v))).collect()))
            .collect(),
        globals: s.mg.iter().map(|(k, v)| (k.clone(), fix(v))).collect(),
    }
}

/// The engine's outcome in the reference's comparable form.
pub fn observe(vm: &VirtualBackend, o: &Outcome) -> Observed {
    let kind = match &o.kind {
        OutcomeKind::Completed => Kind::Completed,
        OutcomeKind::Bail { index } => Kind::Bail(*index),
        OutcomeKind::Crash { index, crash_id } => Kind::Crash(*index, crash_id.to_string()),
        OutcomeKind::Hang => panic!("virtual runs never hang"),
    };
    let final_state = o.final_state.as_ref().map(|st| {
        let ids: Vec<usize> = st.objects.iter().map(|l| l.id.0 as usize).collect();
        let map = renumber(&ids);
        let conv = |v: &TypestateValue| match v {
            TypestateValue::Int(n) => V::Int(*n),
            TypestateValue::Str(s) => V::Bytes(s.clone()),
            TypestateValue::Ptr(p) => V::Ptr(map[&(p.0 as usize)]),
        };
        let mut attrs = BTreeMap::new();
        for &id in map.keys() {
            let a = st.store.attrs(stitch_core::typestate::ObjectId(id as u32));
            if !a.is_empty() {
                attrs.insert(
                    map[&id],
                    a.iter()
                        .map(|(k, v)| (vm.keys().name(*k).to_string(), conv(v)))
                        .collect(),
                );
            }
        }
        Final {
            types: st.objects.iter().map(|l| l.ty).collect(),
            identity: ids.iter().map(|i| map[i]).collect(),
            attrs,
            globals: st
                .store
                .globals()
                .iter()
                .map(|(k, v)| (vm.keys().name(*k).to_string(), conv(v)))
                .collect(),
        }
    });
    Observed {
        kind,
        coverage: o.coverage.edges().iter().copied().collect(),
        requested: o.reshaped.iter().map(|r| (r.instance, r.requested.clone())).collect(),
        final_state,
    }
}
