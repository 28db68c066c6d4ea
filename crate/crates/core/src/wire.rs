//! Binary testcase format shared by corpus files and native harnesses.
//!
//! Little-endian, no padding:
//!
//! ```text
//! "STCH" | version u32 = 1 | instance_count u32
//! per instance: block_index u32 | ref_count u32 | refs u32 * ref_count | param_count u32
//! per param:    kind u8 (0 fixed, 1 str, 2 file) | length u32 | bytes
//! ```

use thiserror::Error;

use crate::spec::{BlockId, Specification};
use crate::testcase::{BlockInstance, ParamKind, ParamRecord, ParamValue, Testcase};

pub const MAGIC: &[u8; 4] = b"STCH";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    BadVersion(u32),
    #[error("truncated record at byte {0}")]
    Truncated(usize),
    #[error("unknown parameter kind {0}")]
    BadParamKind(u8),
    #[error("block index {0} out of range")]
    BlockOutOfRange(u32),
    #[error("{0} trailing bytes after the last instance")]
    TrailingBytes(usize),
}

pub fn serialize(t: &Testcase) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + t.instances.len() * 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.instances.len() as u32).to_le_bytes());
    for inst in &t.instances {
        out.extend_from_slice(&inst.block.0.to_le_bytes());
        out.extend_from_slice(&(inst.refs.len() as u32).to_le_bytes());
        for r in &inst.refs {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out.extend_from_slice(&(inst.params.values.len() as u32).to_le_bytes());
        for p in &inst.params.values {
            out.push(p.kind.tag());
            out.extend_from_slice(&(p.bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&p.bytes);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(WireError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
}

/// Decodes without consulting a spec. Fixed params take their width from the
/// stored length.
pub fn deserialize_unchecked(bytes: &[u8]) -> Result<Testcase, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| WireError::BadMagic)? != MAGIC {
        return Err(WireError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(WireError::BadVersion(version));
    }
    let count = r.u32()?;
    let mut instances = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let block = r.u32()?;
        let nrefs = r.u32()?;
        let mut refs = Vec::with_capacity(nrefs.min(4096) as usize);
        for _ in 0..nrefs {
            refs.push(r.u32()?);
        }
        let nparams = r.u32()?;
        let mut values = Vec::with_capacity(nparams.min(4096) as usize);
        for _ in 0..nparams {
            let tag = r.u8()?;
            let len = r.u32()?;
            let data = r.take(len as usize)?.to_vec();
            let kind = match tag {
                0 => ParamKind::Fixed(len),
                1 => ParamKind::Str,
                2 => ParamKind::File,
                other => return Err(WireError::BadParamKind(other)),
            };
            values.push(ParamValue { kind, bytes: data });
        }
        instances.push(BlockInstance {
            block: BlockId(block),
            refs,
            params: ParamRecord::new(values),
        });
    }
    if r.pos != bytes.len() {
        return Err(WireError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(Testcase::new(instances))
}

/// Decodes and checks every block index against `spec`.
pub fn deserialize(bytes: &[u8], spec: &Specification) -> Result<Testcase, WireError> {
    let t = deserialize_unchecked(bytes)?;
    if let Some(bad) = t
        .instances
        .iter()
        .find(|i| i.block.index() >= spec.blocks.len())
    {
        return Err(WireError::BlockOutOfRange(bad.block.0));
    }
    Ok(t)
}
