//! Fuzzable specifications: object types, code blocks and hints, loaded from
//! the JSON document format.
//!
//! ```json
//! {
//!   "types": ["Doc", {"name": "Elem", "aliases": ["Element*"]}],
//!   "blocks": [
//!     {"name": "createDoc", "code": "...", "inputs": [],
//!      "outputs": [{"name": "doc", "type": "Doc"}], "hint_class": "names"}
//!   ],
//!   "hints": {"names": ["x", "p:x"]},
//!   "revision": 1
//! }
//! ```
//!
//! Aliases are resolved at parse time so every [`CodeBlock`] refers to
//! canonical [`TypeId`]s. Fields the loader does not understand are kept and
//! written back out by [`Specification::to_json`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

/// Prefix marking a code field whose body lives in a file next to the spec.
pub const FILE_REF_PREFIX: &str = "@file:";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("malformed spec document: {0}")]
    Json(String),
    #[error("duplicate block name {0:?}")]
    DuplicateBlockName(String),
    #[error("duplicate type name {0:?}")]
    DuplicateTypeName(String),
    #[error("type alias {0:?} maps to more than one type")]
    AmbiguousAlias(String),
    #[error("block {block:?} references unknown type {ty:?}")]
    UnknownType { block: String, ty: String },
    #[error("block {0:?} has an empty code string")]
    EmptyCode(String),
    #[error("revision must be >= 1, got {0}")]
    BadRevision(i64),
    #[error("block {block:?}: cannot read code file {path:?}: {reason}")]
    CodeFile {
        block: String,
        path: String,
        reason: String,
    },
    #[error("cannot read spec {path:?}: {reason}")]
    Io { path: String, reason: String },
}

/// Index of a canonical type within [`Specification::types`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypeId(pub u32);

impl TypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Index of a block within [`Specification::blocks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId(pub u32);

impl BlockId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeDef {
    pub name: String,
    pub aliases: Vec<String>,
    /// `true` when the document spelled this type as a bare string.
    pub bare: bool,
    pub extra: Map<String, Value>,
}

impl TypeDef {
    /// The C/C++ spelling used by generated native code: the first alias
    /// ending in `*`, otherwise `<name>*`.
    pub fn native_spelling(&self) -> String {
        self.aliases
            .iter()
            .find(|a| a.trim_end().ends_with('*'))
            .cloned()
            .unwrap_or_else(|| format!("{}*", self.name))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Port {
    pub name: String,
    pub ty: TypeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodeBlock {
    pub name: String,
    /// The code field exactly as written in the document.
    pub code: String,
    /// Body loaded from disk when `code` is an `@file:` reference.
    pub resolved: Option<String>,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub hint_class: Option<String>,
    pub extra: Map<String, Value>,
}

impl CodeBlock {
    /// The code that actually runs: the referenced file's contents when one
    /// was loaded, otherwise the inline code string.
    pub fn body(&self) -> &str {
        self.resolved.as_deref().unwrap_or(&self.code)
    }

    pub fn file_ref(&self) -> Option<&str> {
        self.code.strip_prefix(FILE_REF_PREFIX).map(str::trim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Specification {
    pub types: Vec<TypeDef>,
    pub blocks: Vec<CodeBlock>,
    pub hints: BTreeMap<String, Vec<Vec<u8>>>,
    pub revision: u64,
    pub extra: Map<String, Value>,
    type_lookup: HashMap<String, TypeId>,
}

// Raw document shapes, used only for (de)serialization.

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum RawType {
    Bare(String),
    Full {
        name: String,
        #[serde(default)]
        aliases: Vec<String>,
        #[serde(flatten)]
        extra: Map<String, Value>,
    },
}

#[derive(Deserialize, Serialize)]
struct RawPort {
    name: String,
    #[serde(rename = "type")]
    ty: String,
}

#[derive(Deserialize, Serialize)]
struct RawBlock {
    name: String,
    code: String,
    #[serde(default)]
    inputs: Vec<RawPort>,
    #[serde(default)]
    outputs: Vec<RawPort>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hint_class: Option<String>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize, Serialize)]
struct RawSpec {
    #[serde(default)]
    types: Vec<RawType>,
    #[serde(default)]
    blocks: Vec<RawBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hints: Option<BTreeMap<String, Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    revision: Option<i64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Parses a specification document and canonicalizes every type reference.
pub fn parse_spec(text: &str) -> Result<Specification, SpecError> {
    let raw: RawSpec = serde_json::from_str(text).map_err(|e| SpecError::Json(e.to_string()))?;

    let mut types = Vec::with_capacity(raw.types.len());
    let mut lookup: HashMap<String, TypeId> = HashMap::new();
    for rt in raw.types {
        let def = match rt {
            RawType::Bare(name) => TypeDef {
                name,
                aliases: Vec::new(),
                bare: true,
                extra: Map::new(),
            },
            RawType::Full {
                name,
                aliases,
                extra,
            } => TypeDef {
                name,
                aliases,
                bare: false,
                extra,
            },
        };
        let id = TypeId(types.len() as u32);
        if lookup.insert(def.name.clone(), id).is_some() {
            return Err(SpecError::DuplicateTypeName(def.name));
        }
        types.push(def);
    }
    for (idx, def) in types.iter().enumerate() {
        for alias in &def.aliases {
            match lookup.get(alias) {
                Some(&prev) if prev.index() == idx => {}
                Some(_) => return Err(SpecError::AmbiguousAlias(alias.clone())),
                None => {
                    lookup.insert(alias.clone(), TypeId(idx as u32));
                }
            }
        }
    }

    let hints: BTreeMap<String, Vec<Vec<u8>>> = raw
        .hints
        .unwrap_or_default()
        .into_iter()
        .map(|(k, vs)| (k, vs.into_iter().map(String::into_bytes).collect()))
        .collect();

    let mut seen = HashSet::new();
    let mut blocks = Vec::with_capacity(raw.blocks.len());
    for rb in raw.blocks {
        if !seen.insert(rb.name.clone()) {
            return Err(SpecError::DuplicateBlockName(rb.name));
        }
        if rb.code.trim().is_empty() {
            return Err(SpecError::EmptyCode(rb.name));
        }
        let resolve = |ports: Vec<RawPort>| -> Result<Vec<Port>, SpecError> {
            ports
                .into_iter()
                .map(|p| match lookup.get(&p.ty) {
                    Some(&ty) => Ok(Port { name: p.name, ty }),
                    None => Err(SpecError::UnknownType {
                        block: rb.name.clone(),
                        ty: p.ty,
                    }),
                })
                .collect()
        };
        let inputs = resolve(rb.inputs)?;
        let outputs = resolve(rb.outputs)?;
        if let Some(class) = &rb.hint_class {
            if !hints.contains_key(class) {
                log::warn!("block {:?} names undefined hint class {:?}", rb.name, class);
            }
        }
        blocks.push(CodeBlock {
            name: rb.name,
            code: rb.code,
            resolved: None,
            inputs,
            outputs,
            hint_class: rb.hint_class,
            extra: rb.extra,
        });
    }

    let revision = match raw.revision {
        None => 1,
        Some(r) if r >= 1 => r as u64,
        Some(r) => return Err(SpecError::BadRevision(r)),
    };

    let spec = Specification {
        types,
        blocks,
        hints,
        revision,
        extra: raw.extra,
        type_lookup: lookup,
    };
    if !spec.blocks.is_empty() && !spec.blocks.iter().any(|b| b.inputs.is_empty()) {
        log::warn!("no block has zero inputs; every type is unconstructable");
    }
    Ok(spec)
}

/// Reads a spec from disk and loads every `@file:` code body relative to the
/// spec's directory.
pub fn load_spec(path: &Path) -> Result<Specification, SpecError> {
    let text = std::fs::read_to_string(path).map_err(|e| SpecError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut spec = parse_spec(&text)?;
    spec.resolve_code_files(path.parent().unwrap_or_else(|| Path::new(".")))?;
    Ok(spec)
}

impl Specification {
    /// An empty specification (no types, no blocks).
    pub fn empty() -> Self {
        Specification {
            types: Vec::new(),
            blocks: Vec::new(),
            hints: BTreeMap::new(),
            revision: 1,
            extra: Map::new(),
            type_lookup: HashMap::new(),
        }
    }

    pub fn resolve_code_files(&mut self, base: &Path) -> Result<(), SpecError> {
        for block in &mut self.blocks {
            if let Some(rel) = block.file_ref() {
                let path = base.join(rel);
                let body = std::fs::read_to_string(&path).map_err(|e| SpecError::CodeFile {
                    block: block.name.clone(),
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                block.resolved = Some(body);
            }
        }
        Ok(())
    }

    /// Looks up a type by canonical name or alias.
    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.type_lookup.get(name).copied()
    }

    /// Canonical spelling of a type name or alias.
    pub fn canonicalize<'a>(&'a self, name: &str) -> Option<&'a str> {
        self.type_id(name).map(|id| self.type_name(id))
    }

    pub fn type_name(&self, id: TypeId) -> &str {
        &self.types[id.index()].name
    }

    pub fn block(&self, id: BlockId) -> &CodeBlock {
        &self.blocks[id.index()]
    }

    pub fn block_id(&self, name: &str) -> Option<BlockId> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| BlockId(i as u32))
    }

    pub fn block_ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        (0..self.blocks.len() as u32).map(BlockId)
    }

    /// Blocks that produce at least one output of `ty`.
    pub fn producers_of(&self, ty: TypeId) -> Vec<BlockId> {
        self.block_ids()
            .filter(|&b| self.block(b).outputs.iter().any(|p| p.ty == ty))
            .collect()
    }

    /// Blocks that take at least one input of `ty`.
    pub fn consumers_of(&self, ty: TypeId) -> Vec<BlockId> {
        self.block_ids()
            .filter(|&b| self.block(b).inputs.iter().any(|p| p.ty == ty))
            .collect()
    }

    pub fn hints_for(&self, block: BlockId) -> &[Vec<u8>] {
        self.block(block)
            .hint_class
            .as_ref()
            .and_then(|c| self.hints.get(c))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Adds a block after parsing. Used by fixtures and tests that build
    /// specs programmatically.
    pub fn push_block(&mut self, block: CodeBlock) -> Result<BlockId, SpecError> {
        if self.blocks.iter().any(|b| b.name == block.name) {
            return Err(SpecError::DuplicateBlockName(block.name));
        }
        if block.code.trim().is_empty() {
            return Err(SpecError::EmptyCode(block.name));
        }
        for p in block.inputs.iter().chain(&block.outputs) {
            if p.ty.index() >= self.types.len() {
                return Err(SpecError::UnknownType {
                    block: block.name.clone(),
                    ty: format!("{:?}", p.ty),
                });
            }
        }
        self.blocks.push(block);
        Ok(BlockId(self.blocks.len() as u32 - 1))
    }

    pub fn push_type(&mut self, name: &str) -> Result<TypeId, SpecError> {
        if self.type_lookup.contains_key(name) {
            return Err(SpecError::DuplicateTypeName(name.to_string()));
        }
        let id = TypeId(self.types.len() as u32);
        self.types.push(TypeDef {
            name: name.to_string(),
            aliases: Vec::new(),
            bare: true,
            extra: Map::new(),
        });
        self.type_lookup.insert(name.to_string(), id);
        Ok(id)
    }

    /// Which types can be built from nothing: the least fixed point starting
    /// at blocks with zero inputs.
    pub fn constructability_report(&self) -> BTreeMap<String, bool> {
        let ok = self.constructable_types();
        self.types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), ok[i]))
            .collect()
    }

    /// Constructability indexed by [`TypeId`].
    pub fn constructable_types(&self) -> Vec<bool> {
        let mut ok = vec![false; self.types.len()];
        loop {
            let mut changed = false;
            for b in &self.blocks {
                if b.inputs.iter().all(|p| ok[p.ty.index()]) {
                    for p in &b.outputs {
                        if !ok[p.ty.index()] {
                            ok[p.ty.index()] = true;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return ok;
            }
        }
    }

    /// Copy with every `@file:` reference replaced by the text it resolved to.
    pub fn inlined(&self) -> Specification {
        let mut s = self.clone();
        for b in &mut s.blocks {
            if let Some(text) = b.resolved.take() {
                b.code = text;
            }
        }
        s
    }

    /// Serializes back to the document format.
    pub fn to_json(&self) -> String {
        let raw = RawSpec {
            types: self
                .types
                .iter()
                .map(|t| {
                    if t.bare && t.aliases.is_empty() && t.extra.is_empty() {
                        RawType::Bare(t.name.clone())
                    } else {
                        RawType::Full {
                            name: t.name.clone(),
                            aliases: t.aliases.clone(),
                            extra: t.extra.clone(),
                        }
                    }
                })
                .collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    let ports = |ps: &[Port]| {
                        ps.iter()
                            .map(|p| RawPort {
                                name: p.name.clone(),
                                ty: self.type_name(p.ty).to_string(),
                            })
                            .collect()
                    };
                    RawBlock {
                        name: b.name.clone(),
                        code: b.code.clone(),
                        inputs: ports(&b.inputs),
                        outputs: ports(&b.outputs),
                        hint_class: b.hint_class.clone(),
                        extra: b.extra.clone(),
                    }
                })
                .collect(),
            hints: if self.hints.is_empty() {
                None
            } else {
                Some(
                    self.hints
                        .iter()
                        .map(|(k, vs)| {
                            (
                                k.clone(),
                                vs.iter()
                                    .map(|v| String::from_utf8_lossy(v).into_owned())
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            },
            revision: Some(self.revision as i64),
            extra: self.extra.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("spec serializes")
    }
}
