//! Block programs: the line-oriented mini-language run by the virtual backend.
//!
//! ```text
//! # comment
//! param tag str                      # also: fixed <width>, file
//! bail_if attr_int(in0, "ns") != 1
//! crash_if attr_str(in0, "plain") == local(qname) :ns_collision
//! set_attr out1 doc ptr(in0)
//! set_global init 1
//! cover 7
//! cover_if len(tag) < 3 8
//! emit 0 passthrough 0
//! emit out1 new
//! bail
//! ```
//!
//! Expressions: integer and string literals, parameter names, `ptr(obj)`,
//! `attr_{int,str,ptr}(obj, key)`, `global_{int,str,ptr}(key)`, `int(e)`,
//! `len(e)`, `int_mod(e, e)` and `local(e)` (the part after the last `:`).
//! Conditions are `e == e`, `e != e` or `e < e`.

use std::fmt;

use thiserror::Error;

use crate::testcase::ParamKind;
use crate::typestate::ValueTag;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjRef {
    In(usize),
    Out(usize),
}

impl fmt::Display for ObjRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjRef::In(i) => write!(f, "in{i}"),
            ObjRef::Out(i) => write!(f, "out{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Str(Vec<u8>),
    Param(String),
    Ptr(ObjRef),
    Attr(ObjRef, String, ValueTag),
    Global(String, ValueTag),
    ToInt(Box<Expr>),
    Len(Box<Expr>),
    IntMod(Box<Expr>, Box<Expr>),
    Local(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cond {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Emit {
    New,
    Passthrough(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    Param { name: String, kind: ParamKind },
    SetAttr { obj: ObjRef, key: String, value: Expr },
    SetGlobal { key: String, value: Expr },
    BailIf(Cond),
    CrashIf(Cond, String),
    Cover(u32),
    CoverIf(Cond, u32),
    Emit { slot: usize, source: Emit },
    Bail,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub instrs: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(Vec<u8>),
    LParen,
    RParen,
    Comma,
    Op(CmpOp),
    Label(String),
}

fn lex(line: &str) -> Result<Vec<Tok>, String> {
    let bytes = line.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' => i += 1,
            b'#' => break,
            b'(' => {
                toks.push(Tok::LParen);
                i += 1
            }
            b')' => {
                toks.push(Tok::RParen);
                i += 1
            }
            b',' => {
                toks.push(Tok::Comma);
                i += 1
            }
            b'=' | b'!' if bytes.get(i + 1) == Some(&b'=') => {
                toks.push(Tok::Op(if c == b'=' { CmpOp::Eq } else { CmpOp::Ne }));
                i += 2
            }
            b'<' => {
                toks.push(Tok::Op(CmpOp::Lt));
                i += 1
            }
            b':' => {
                let start = i + 1;
                i = start;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                if i == start {
                    return Err("empty crash label".into());
                }
                toks.push(Tok::Label(line[start..i].to_string()));
            }
            b'"' => {
                i += 1;
                let mut s = Vec::new();
                loop {
                    match bytes.get(i) {
                        None => return Err("unterminated string literal".into()),
                        Some(b'"') => {
                            i += 1;
                            break;
                        }
                        Some(b'\\') => {
                            let esc = *bytes.get(i + 1).ok_or("dangling escape")?;
                            i += 2;
                            match esc {
                                b'n' => s.push(b'\n'),
                                b't' => s.push(b'\t'),
                                b'0' => s.push(0),
                                b'\\' | b'"' => s.push(esc),
                                b'x' => {
                                    let hex = line.get(i..i + 2).ok_or("short \\x escape")?;
                                    s.push(
                                        u8::from_str_radix(hex, 16)
                                            .map_err(|_| format!("bad \\x escape {hex:?}"))?,
                                    );
                                    i += 2;
                                }
                                other => return Err(format!("unknown escape \\{}", other as char)),
                            }
                        }
                        Some(&b) => {
                            s.push(b);
                            i += 1
                        }
                    }
                }
                toks.push(Tok::Str(s));
            }
            b'-' | b'0'..=b'9' => {
                let start = i;
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric()) {
                    i += 1;
                }
                let text = &line[start..i];
                let (neg, digits) = match text.strip_prefix('-') {
                    Some(d) => (true, d),
                    None => (false, text),
                };
                let v = match digits.strip_prefix("0x") {
                    Some(h) => i64::from_str_radix(h, 16),
                    None => digits.parse::<i64>(),
                }
                .map_err(|_| format!("bad integer literal {text:?}"))?;
                toks.push(Tok::Int(if neg { -v } else { v }));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push(Tok::Ident(line[start..i].to_string()));
            }
            other => return Err(format!("unexpected character {:?}", other as char)),
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), String> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(format!("expected {want:?}, found {other:?}")),
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(format!("expected identifier, found {other:?}")),
        }
    }

    fn uint(&mut self) -> Result<u64, String> {
        match self.next() {
            Some(Tok::Int(v)) if v >= 0 => Ok(v as u64),
            other => Err(format!("expected non-negative integer, found {other:?}")),
        }
    }

    fn key(&mut self) -> Result<String, String> {
        let k = match self.next() {
            Some(Tok::Ident(s)) => s,
            Some(Tok::Str(s)) => String::from_utf8(s).map_err(|_| "key is not UTF-8")?,
            other => return Err(format!("expected key, found {other:?}")),
        };
        if k.is_empty() {
            return Err("typestate keys must be non-empty".into());
        }
        Ok(k)
    }

    fn obj(&mut self) -> Result<ObjRef, String> {
        let name = self.ident()?;
        parse_obj(&name).ok_or_else(|| format!("expected inN or outN, found {name:?}"))
    }

    fn slot(&mut self, prefix: &str) -> Result<usize, String> {
        match self.next() {
            Some(Tok::Int(v)) if v >= 0 => Ok(v as usize),
            Some(Tok::Ident(s)) => s
                .strip_prefix(prefix)
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| format!("expected slot, found {s:?}")),
            other => Err(format!("expected slot, found {other:?}")),
        }
    }

    fn done(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(format!("unexpected trailing {t:?}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        match self.next() {
            Some(Tok::Int(v)) => Ok(Expr::Int(v)),
            Some(Tok::Str(s)) => Ok(Expr::Str(s)),
            Some(Tok::Ident(name)) => {
                if self.peek() != Some(&Tok::LParen) {
                    return Ok(Expr::Param(name));
                }
                self.expect(Tok::LParen)?;
                let e = match name.as_str() {
                    "ptr" => Expr::Ptr(self.obj()?),
                    "attr_int" | "attr_str" | "attr_ptr" => {
                        let o = self.obj()?;
                        self.expect(Tok::Comma)?;
                        Expr::Attr(o, self.key()?, tag_of(&name))
                    }
                    "global_int" | "global_str" | "global_ptr" => {
                        Expr::Global(self.key()?, tag_of(&name))
                    }
                    "int" => Expr::ToInt(Box::new(self.expr()?)),
                    "len" => Expr::Len(Box::new(self.expr()?)),
                    "local" => Expr::Local(Box::new(self.expr()?)),
                    "int_mod" => {
                        let a = self.expr()?;
                        self.expect(Tok::Comma)?;
                        Expr::IntMod(Box::new(a), Box::new(self.expr()?))
                    }
                    other => return Err(format!("unknown function {other:?}")),
                };
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            other => Err(format!("expected expression, found {other:?}")),
        }
    }

    fn cond(&mut self) -> Result<Cond, String> {
        let lhs = self.expr()?;
        let op = match self.next() {
            Some(Tok::Op(op)) => op,
            other => return Err(format!("expected ==, != or <, found {other:?}")),
        };
        let rhs = self.expr()?;
        Ok(Cond { lhs, op, rhs })
    }

    fn edge(&mut self) -> Result<u32, String> {
        let v = self.uint()?;
        u32::try_from(v).map_err(|_| format!("edge id {v} exceeds u32"))
    }
}

fn tag_of(func: &str) -> ValueTag {
    if func.ends_with("_int") {
        ValueTag::Int
    } else if func.ends_with("_str") {
        ValueTag::Str
    } else {
        ValueTag::Ptr
    }
}

fn parse_obj(name: &str) -> Option<ObjRef> {
    if let Some(d) = name.strip_prefix("in") {
        d.parse().ok().map(ObjRef::In)
    } else if let Some(d) = name.strip_prefix("out") {
        d.parse().ok().map(ObjRef::Out)
    } else {
        None
    }
}

fn parse_line(toks: Vec<Tok>) -> Result<Instr, String> {
    let mut p = Parser { toks, pos: 0 };
    let op = p.ident()?;
    let instr = match op.as_str() {
        "param" => {
            let name = p.ident()?;
            if parse_obj(&name).is_some() {
                return Err(format!("parameter name {name:?} shadows an object slot"));
            }
            let kind = match p.ident()?.as_str() {
                "fixed" => {
                    let w = p.uint()?;
                    ParamKind::Fixed(u32::try_from(w).map_err(|_| "width too large")?)
                }
                "str" => ParamKind::Str,
                "file" => ParamKind::File,
                other => return Err(format!("unknown parameter kind {other:?}")),
            };
            Instr::Param { name, kind }
        }
        "set_attr" => {
            let obj = p.obj()?;
            let key = p.key()?;
            Instr::SetAttr {
                obj,
                key,
                value: p.expr()?,
            }
        }
        "set_global" => {
            let key = p.key()?;
            Instr::SetGlobal {
                key,
                value: p.expr()?,
            }
        }
        "bail_if" => Instr::BailIf(p.cond()?),
        "crash_if" => {
            let c = p.cond()?;
            match p.next() {
                Some(Tok::Label(id)) => Instr::CrashIf(c, id),
                other => return Err(format!("expected :crash_id, found {other:?}")),
            }
        }
        "cover" => Instr::Cover(p.edge()?),
        "cover_if" => {
            let c = p.cond()?;
            Instr::CoverIf(c, p.edge()?)
        }
        "emit" => {
            let slot = p.slot("out")?;
            let source = match p.ident()?.as_str() {
                "new" => Emit::New,
                "passthrough" => Emit::Passthrough(p.slot("in")?),
                other => return Err(format!("expected new or passthrough, found {other:?}")),
            };
            Instr::Emit { slot, source }
        }
        "bail" => Instr::Bail,
        other => return Err(format!("unknown instruction {other:?}")),
    };
    p.done()?;
    Ok(instr)
}

impl Program {
    pub fn parse(text: &str) -> Result<Program, ParseError> {
        let mut instrs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let toks = lex(line).map_err(|message| ParseError {
                line: n + 1,
                message,
            })?;
            if toks.is_empty() {
                continue;
            }
            instrs.push(parse_line(toks).map_err(|message| ParseError {
                line: n + 1,
                message,
            })?);
        }
        Ok(Program { instrs })
    }

    /// Cheap check used to tell block programs apart from native source.
    pub fn looks_like_program(text: &str) -> bool {
        Program::parse(text).is_ok()
    }
}
