//! Extrinsic typestate: per-object and global key/value metadata that blocks
//! read and write while a testcase runs.
//!
//! Keys are interned into [`Key`] symbols by a [`KeyTable`] once per spec so
//! that lookups during execution never hash strings. Objects are identified
//! by dense [`ObjectId`] tokens handed out by [`TypestateStore::register`].

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Identity token of a live object. Equality is identity, never structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(pub u32);

#[derive(Debug, Clone, Default)]
pub struct KeyTable {
    names: Vec<String>,
    ids: HashMap<String, Key>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("typestate keys must be non-empty")]
pub struct EmptyKey;

impl KeyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> Result<Key, EmptyKey> {
        if name.is_empty() {
            return Err(EmptyKey);
        }
        if let Some(&k) = self.ids.get(name) {
            return Ok(k);
        }
        let k = Key(self.names.len() as u32);
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), k);
        Ok(k)
    }

    pub fn get(&self, name: &str) -> Option<Key> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, key: Key) -> &str {
        &self.names[key.0 as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypestateValue {
    Int(i64),
    Str(Vec<u8>),
    Ptr(ObjectId),
}

/// The tag a block asks for when reading, mirroring INT / STR / PTR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueTag {
    Int,
    Str,
    Ptr,
}

impl TypestateValue {
    pub fn tag(&self) -> ValueTag {
        match self {
            TypestateValue::Int(_) => ValueTag::Int,
            TypestateValue::Str(_) => ValueTag::Str,
            TypestateValue::Ptr(_) => ValueTag::Ptr,
        }
    }
}

impl fmt::Display for TypestateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypestateValue::Int(v) => write!(f, "{v}"),
            TypestateValue::Str(s) => write!(f, "{:?}", String::from_utf8_lossy(s)),
            TypestateValue::Ptr(o) => write!(f, "<obj {}>", o.0),
        }
    }
}

/// Why a typed read produced no value. Either way the reading block bails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Miss {
    Absent,
    WrongTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("object {} is not registered", .0 .0)]
pub struct UnregisteredObject(pub ObjectId);

type AttrMap = Vec<(Key, TypestateValue)>;

fn find(map: &AttrMap, k: Key) -> Option<&TypestateValue> {
    map.iter().find(|(key, _)| *key == k).map(|(_, v)| v)
}

fn put(map: &mut AttrMap, k: Key, v: TypestateValue) {
    match map.iter_mut().find(|(key, _)| *key == k) {
        Some(slot) => slot.1 = v,
        None => map.push((k, v)),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypestateStore {
    per_object: Vec<AttrMap>,
    global: AttrMap,
}

impl TypestateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a fresh object with an empty attribute map.
    pub fn register(&mut self) -> ObjectId {
        self.per_object.push(Vec::new());
        ObjectId(self.per_object.len() as u32 - 1)
    }

    pub fn is_registered(&self, o: ObjectId) -> bool {
        (o.0 as usize) < self.per_object.len()
    }

    pub fn object_count(&self) -> usize {
        self.per_object.len()
    }

    pub fn set_attr(
        &mut self,
        o: ObjectId,
        k: Key,
        v: TypestateValue,
    ) -> Result<(), UnregisteredObject> {
        let map = self
            .per_object
            .get_mut(o.0 as usize)
            .ok_or(UnregisteredObject(o))?;
        put(map, k, v);
        Ok(())
    }

    pub fn get_attr(&self, o: ObjectId, k: Key) -> Result<Option<&TypestateValue>, UnregisteredObject> {
        let map = self
            .per_object
            .get(o.0 as usize)
            .ok_or(UnregisteredObject(o))?;
        Ok(find(map, k))
    }

    pub fn set_global(&mut self, k: Key, v: TypestateValue) {
        put(&mut self.global, k, v);
    }

    pub fn get_global(&self, k: Key) -> Option<&TypestateValue> {
        find(&self.global, k)
    }

    /// Attributes of one object, in insertion order.
    pub fn attrs(&self, o: ObjectId) -> &[(Key, TypestateValue)] {
        self.per_object
            .get(o.0 as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn globals(&self) -> &[(Key, TypestateValue)] {
        &self.global
    }
}

/// Typed read: the stored value if present and tagged `tag`.
pub fn typed(value: Option<&TypestateValue>, tag: ValueTag) -> Result<&TypestateValue, Miss> {
    match value {
        None => Err(Miss::Absent),
        Some(v) if v.tag() == tag => Ok(v),
        Some(_) => Err(Miss::WrongTag),
    }
}
