//! Random specifications, testcases and a brute-force well-formedness check.

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};
use stitch_core::{
    parse_spec, BlockId, BlockInstance, ParamKind, ParamValue, Specification, Testcase,
};

const KEYS: [&str; 3] = ["k", "j", "st"];
const INTS: [&str; 7] = ["-1", "0", "1", "2", "3", "0x10", "97"];
const STRS: [&str; 6] = ["\"\"", "\"a\"", "\"p:a\"", "\"b\\x00\"", "\"a:\"", "\"\\n\""];
const ALPHABET: [u8; 7] = [0, 1, 2, 3, b'a', b':', b'p'];

struct Scope {
    params: Vec<String>,
    objs: Vec<String>,
}

fn key(rng: &mut impl Rng) -> String {
    let k = KEYS.choose(rng).unwrap();
    if rng.gen_bool(0.2) {
        format!("\"{k}\"")
    } else {
        k.to_string()
    }
}

fn tag(rng: &mut impl Rng) -> &'static str {
    ["int", "str", "ptr"].choose(rng).unwrap()
}

fn expr(rng: &mut impl Rng, s: &Scope, depth: u32) -> String {
    let pick = rng.gen_range(0..if depth == 0 { 8 } else { 13 });
    match pick {
        6 | 7 if !s.params.is_empty() => s.params.choose(rng).unwrap().clone(),
        6 | 7 => STRS.choose(rng).unwrap().to_string(),
        0 => INTS.choose(rng).unwrap().to_string(),
        1 => STRS.choose(rng).unwrap().to_string(),
        2 if !s.params.is_empty() => s.params.choose(rng).unwrap().clone(),
        3 if !s.objs.is_empty() => format!("ptr({})", s.objs.choose(rng).unwrap()),
        4 if !s.objs.is_empty() => {
            format!("attr_{}({}, {})", tag(rng), s.objs.choose(rng).unwrap(), key(rng))
        }
        5 => format!("global_{}({})", tag(rng), key(rng)),
        8 | 9 => format!("int({})", expr(rng, s, depth - 1)),
        10 => format!("len({})", expr(rng, s, depth - 1)),
        11 => format!("local({})", expr(rng, s, depth - 1)),
        12 => format!("int_mod({}, {})", expr(rng, s, depth - 1), expr(rng, s, depth - 1)),
        _ => INTS.choose(rng).unwrap().to_string(),
    }
}

fn cond(rng: &mut impl Rng, s: &Scope) -> String {
    let op = ["==", "!=", "<"].choose(rng).unwrap();
    format!("{} {op} {}", expr(rng, s, 2), expr(rng, s, 2))
}

fn statement(rng: &mut impl Rng, s: &mut Scope, crash_ids: &mut u32) -> String {
    match rng.gen_range(0..100) {
        0..=14 => {
            let name = format!("p{}", s.params.len());
            let kind = match rng.gen_range(0..6) {
                0 => "str".to_string(),
                1 => "file".to_string(),
                _ => format!("fixed {}", [1, 2, 4, 8].choose(rng).unwrap()),
            };
            s.params.push(name.clone());
            format!("param {name} {kind}")
        }
        15..=34 if !s.objs.is_empty() => format!(
            "set_attr {} {} {}",
            s.objs.choose(rng).unwrap(),
            key(rng),
            expr(rng, s, 2)
        ),
        35..=44 => format!("set_global {} {}", key(rng), expr(rng, s, 2)),
        45..=57 => format!("bail_if {}", cond(rng, s)),
        58..=67 => {
            *crash_ids += 1;
            format!("crash_if {} :c{}", cond(rng, s), *crash_ids % 3)
        }
        68..=77 => format!("cover {}", rng.gen_range(0..24)),
        78..=97 => format!("cover_if {} {}", cond(rng, s), rng.gen_range(0..24)),
        98 => "bail".to_string(),
        _ => "# nothing".to_string(),
    }
}

/// Program text for a block with the given port types. Every output is
/// emitted exactly once and only referenced after its emit.
fn program(rng: &mut impl Rng, ins: &[usize], outs: &[usize]) -> String {
    let mut s = Scope {
        params: Vec::new(),
        objs: (0..ins.len()).map(|i| format!("in{i}")).collect(),
    };
    let mut free: Vec<usize> = (0..ins.len()).collect();
    let mut emits: Vec<String> = Vec::new();
    let mut order: Vec<usize> = (0..outs.len()).collect();
    order.shuffle(rng);
    for slot in order {
        let same: Vec<usize> = free.iter().copied().filter(|&i| ins[i] == outs[slot]).collect();
        let via = if rng.gen_bool(0.5) { slot.to_string() } else { format!("out{slot}") };
        if !same.is_empty() && rng.gen_bool(0.6) {
            let i = *same.choose(rng).unwrap();
            free.retain(|&x| x != i);
            let src = if rng.gen_bool(0.5) { i.to_string() } else { format!("in{i}") };
            emits.push(format!("emit {via} passthrough {src}|out{slot}"));
        } else {
            emits.push(format!("emit {via} new|out{slot}"));
        }
    }
    let n = rng.gen_range(1..9);
    let mut lines = Vec::new();
    if rng.gen_bool(0.5) {
        let name = format!("p{}", s.params.len());
        lines.push(format!("param {name} {}", if rng.gen_bool(0.5) { "str" } else { "fixed 2" }));
        s.params.push(name);
    }
    for k in KEYS {
        if rng.gen_bool(0.4) {
            lines.push(format!("set_global {k} {}", expr(rng, &s, 1)));
        }
        if !s.objs.is_empty() && rng.gen_bool(0.4) {
            let o = s.objs.choose(rng).unwrap().clone();
            lines.push(format!("set_attr {o} {k} {}", expr(rng, &s, 1)));
        }
    }
    let mut crash_ids = 0;
    let mut pending = emits.into_iter().peekable();
    for _ in 0..n {
        if pending.peek().is_some() && rng.gen_bool(0.3) {
            let (line, obj) = pending.next().unwrap().split_once('|').map(|(a, b)| (a.to_string(), b.to_string())).unwrap();
            lines.push(line);
            s.objs.push(obj);
        }
        lines.push(statement(rng, &mut s, &mut crash_ids));
    }
    for e in pending {
        let (line, obj) = e.split_once('|').unwrap();
        lines.push(line.to_string());
        s.objs.push(obj.to_string());
        if rng.gen_bool(0.3) {
            lines.push(statement(rng, &mut s, &mut crash_ids));
        }
    }
    lines.join("\n")
}

/// A random spec with at most `max_blocks` blocks; block 0 takes no inputs.
pub fn spec_json(rng: &mut impl Rng, max_blocks: usize) -> Value {
    let ntypes = rng.gen_range(1..=2);
    let nblocks = rng.gen_range(1..=max_blocks);
    let mut blocks = Vec::new();
    for b in 0..nblocks {
        let ins: Vec<usize> = if b == 0 {
            Vec::new()
        } else {
            (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(0..ntypes)).collect()
        };
        let lo = usize::from(b == 0);
        let outs: Vec<usize> = (0..rng.gen_range(lo..=2)).map(|_| rng.gen_range(0..ntypes)).collect();
        let port = |i: usize, t: &usize, p: &str| json!({"name": format!("{p}{i}"), "type": format!("T{t}")});
        blocks.push(json!({
            "name": format!("b{b}"),
            "code": program(rng, &ins, &outs),
            "inputs": ins.iter().enumerate().map(|(i, t)| port(i, t, "x")).collect::<Vec<_>>(),
            "outputs": outs.iter().enumerate().map(|(i, t)| port(i, t, "y")).collect::<Vec<_>>(),
        }));
    }
    json!({
        "types": (0..ntypes).map(|t| format!("T{t}")).collect::<Vec<_>>(),
        "blocks": blocks,
    })
}

pub fn spec(rng: &mut impl Rng, max_blocks: usize) -> Specification {
    parse_spec(&spec_json(rng, max_blocks).to_string()).expect("generated spec parses")
}

pub fn param(rng: &mut impl Rng, kind: ParamKind) -> ParamValue {
    let n = match kind {
        ParamKind::Fixed(w) => w as usize,
        _ => rng.gen_range(0..6),
    };
    let bytes: Vec<u8> = (0..n).map(|_| *ALPHABET.choose(rng).unwrap()).collect();
    ParamValue { kind, bytes }
}

fn any_kind(rng: &mut impl Rng) -> ParamKind {
    match rng.gen_range(0..4) {
        0 => ParamKind::Str,
        1 => ParamKind::File,
        _ => ParamKind::Fixed(*[1, 2, 4, 8].choose(rng).unwrap()),
    }
}

/// A well-formed testcase of at most `max_len` instances. Parameter records
/// usually follow `shapes` and sometimes deviate from it.
pub fn testcase(
    rng: &mut impl Rng,
    spec: &Specification,
    shapes: &[Vec<ParamKind>],
    max_len: usize,
) -> Testcase {
    let len = rng.gen_range(0..=max_len);
    let mut outputs: Vec<usize> = Vec::new();
    let mut used: Vec<bool> = Vec::new();
    let mut instances = Vec::new();
    for _ in 0..len {
        let mut options = Vec::new();
        for (b, blk) in spec.blocks.iter().enumerate() {
            let mut taken: Vec<u32> = Vec::new();
            let mut ok = true;
            for p in &blk.inputs {
                let free: Vec<u32> = (0..outputs.len() as u32)
                    .filter(|&k| !used[k as usize] && outputs[k as usize] == p.ty.index() && !taken.contains(&k))
                    .collect();
                match free.choose(rng) {
                    Some(&k) => taken.push(k),
                    None => ok = false,
                }
            }
            if ok {
                options.push((b, taken));
            }
        }
        let Some((b, refs)) = options.choose(rng).cloned() else { break };
        for &k in &refs {
            used[k as usize] = true;
        }
        for p in &spec.blocks[b].outputs {
            outputs.push(p.ty.index());
            used.push(false);
        }
        let values = match rng.gen_range(0..10) {
            0 => Vec::new(),
            1 | 2 => (0..rng.gen_range(0..4)).map(|_| {
                let k = any_kind(rng);
                param(rng, k)
            }).collect(),
            _ => shapes[b].iter().map(|&k| param(rng, k)).collect(),
        };
        instances.push(BlockInstance::new(BlockId(b as u32), refs).with_params(values));
    }
    Testcase::new(instances)
}

/// Arbitrary structure: block ids and refs may be out of range, reused,
/// forward or mistyped.
pub fn wild_testcase(rng: &mut impl Rng, spec: &Specification, max_len: usize) -> Testcase {
    let len = rng.gen_range(0..=max_len);
    let instances = (0..len)
        .map(|_| {
            let b = if rng.gen_bool(0.05) {
                spec.blocks.len() as u32
            } else {
                rng.gen_range(0..spec.blocks.len() as u32)
            };
            let n = match spec.blocks.get(b as usize) {
                Some(blk) if rng.gen_bool(0.8) => blk.inputs.len(),
                _ => rng.gen_range(0..3),
            };
            let refs = (0..n).map(|_| rng.gen_range(0..(2 * max_len as u32 + 1))).collect();
            BlockInstance::new(BlockId(b), refs)
        })
        .collect();
    Testcase::new(instances)
}

/// Well-formedness by enumeration: every reference names an output that an
/// earlier instance produced, has the declared type and is used once.
pub fn brute_well_formed(spec: &Specification, t: &Testcase) -> bool {
    let mut produced: Vec<usize> = Vec::new();
    let mut seen: Vec<u32> = Vec::new();
    for inst in &t.instances {
        let Some(blk) = spec.blocks.get(inst.block.index()) else { return false };
        if inst.refs.len() != blk.inputs.len() {
            return false;
        }
        for (r, port) in inst.refs.iter().zip(&blk.inputs) {
            if *r as usize >= produced.len() || produced[*r as usize] != port.ty.index() || seen.contains(r) {
                return false;
            }
            seen.push(*r);
        }
        produced.extend(blk.outputs.iter().map(|p| p.ty.index()));
    }
    true
}
