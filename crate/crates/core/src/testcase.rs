//! Block instances, testcases and the three well-formedness rules.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::spec::{BlockId, Specification, TypeId};

/// Shape of a fuzzable parameter as requested by a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Exactly `width` bytes.
    Fixed(u32),
    Str,
    File,
}

impl ParamKind {
    pub fn tag(self) -> u8 {
        match self {
            ParamKind::Fixed(_) => 0,
            ParamKind::Str => 1,
            ParamKind::File => 2,
        }
    }

    pub fn is_variable(self) -> bool {
        !matches!(self, ParamKind::Fixed(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamValue {
    pub kind: ParamKind,
    pub bytes: Vec<u8>,
}

impl ParamValue {
    pub fn fixed(bytes: Vec<u8>) -> Self {
        ParamValue {
            kind: ParamKind::Fixed(bytes.len() as u32),
            bytes,
        }
    }

    pub fn str(bytes: impl Into<Vec<u8>>) -> Self {
        ParamValue {
            kind: ParamKind::Str,
            bytes: bytes.into(),
        }
    }

    pub fn file(bytes: impl Into<Vec<u8>>) -> Self {
        ParamValue {
            kind: ParamKind::File,
            bytes: bytes.into(),
        }
    }

    /// The value handed out when a block requests a parameter beyond the end
    /// of its record.
    pub fn default_for(kind: ParamKind) -> Self {
        let bytes = match kind {
            ParamKind::Fixed(w) => vec![0; w as usize],
            _ => Vec::new(),
        };
        ParamValue { kind, bytes }
    }

    /// Reinterprets this value under a different requested shape: fixed
    /// widths are zero-padded or truncated, variable kinds keep the bytes.
    pub fn coerce(&self, kind: ParamKind) -> ParamValue {
        let mut bytes = self.bytes.clone();
        if let ParamKind::Fixed(w) = kind {
            bytes.resize(w as usize, 0);
        }
        ParamValue { kind, bytes }
    }

    pub fn is_well_shaped(&self) -> bool {
        match self.kind {
            ParamKind::Fixed(w) => self.bytes.len() == w as usize,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ParamRecord {
    pub values: Vec<ParamValue>,
}

impl ParamRecord {
    pub fn new(values: Vec<ParamValue>) -> Self {
        ParamRecord { values }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> Vec<ParamKind> {
        self.values.iter().map(|v| v.kind).collect()
    }
}

/// One placement of a block in a testcase. `refs[j]` is the flat output index
/// feeding input `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockInstance {
    pub block: BlockId,
    pub refs: Vec<u32>,
    pub params: ParamRecord,
}

impl BlockInstance {
    pub fn new(block: BlockId, refs: Vec<u32>) -> Self {
        BlockInstance {
            block,
            refs,
            params: ParamRecord::default(),
        }
    }

    pub fn with_params(mut self, values: Vec<ParamValue>) -> Self {
        self.params = ParamRecord::new(values);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Testcase {
    pub instances: Vec<BlockInstance>,
}

impl Testcase {
    pub fn new(instances: Vec<BlockInstance>) -> Self {
        Testcase { instances }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// `N_i` for every instance plus the grand total as the last element.
    pub fn output_offsets(&self, spec: &Specification) -> Vec<u32> {
        let mut offsets = Vec::with_capacity(self.instances.len() + 1);
        let mut n = 0u32;
        for inst in &self.instances {
            offsets.push(n);
            n += spec.block(inst.block).outputs.len() as u32;
        }
        offsets.push(n);
        offsets
    }

    pub fn total_outputs(&self, spec: &Specification) -> u32 {
        self.instances
            .iter()
            .map(|i| spec.block(i.block).outputs.len() as u32)
            .sum()
    }

    /// Decomposes a flat output index into (instance, output slot).
    pub fn locate_output(&self, spec: &Specification, k: u32) -> Option<(usize, usize)> {
        let mut base = 0u32;
        for (p, inst) in self.instances.iter().enumerate() {
            let m = spec.block(inst.block).outputs.len() as u32;
            if k < base + m {
                return Some((p, (k - base) as usize));
            }
            base += m;
        }
        None
    }

    /// Type of the output at flat index `k`.
    pub fn flat_output_type(&self, spec: &Specification, k: u32) -> Result<TypeId, StructureError> {
        self.check_structure(spec)?;
        self.locate_output(spec, k)
            .map(|(p, q)| spec.block(self.instances[p].block).outputs[q].ty)
            .ok_or(StructureError::OutputOutOfRange(k))
    }

    /// Block indices in range and one reference per declared input.
    pub fn check_structure(&self, spec: &Specification) -> Result<(), StructureError> {
        for (i, inst) in self.instances.iter().enumerate() {
            let Some(block) = spec.blocks.get(inst.block.index()) else {
                return Err(StructureError::BlockOutOfRange {
                    instance: i,
                    block: inst.block.0,
                });
            };
            if block.inputs.len() != inst.refs.len() {
                return Err(StructureError::ArityMismatch {
                    instance: i,
                    expected: block.inputs.len(),
                    found: inst.refs.len(),
                });
            }
        }
        Ok(())
    }

    /// Checks the three well-formedness rules; see [`validate`].
    pub fn validate(&self, spec: &Specification) -> Result<(), ValidationError> {
        validate(spec, self)
    }

    pub fn is_well_formed(&self, spec: &Specification) -> bool {
        validate(spec, self).is_ok()
    }
}

/// Problems that make a testcase meaningless for a spec, as opposed to merely
/// ill-formed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("instance {instance} names block {block}, which is out of range")]
    BlockOutOfRange { instance: usize, block: u32 },
    #[error("instance {instance} has {found} references but its block declares {expected} inputs")]
    ArityMismatch {
        instance: usize,
        expected: usize,
        found: usize,
    },
    #[error("output index {0} is out of range")]
    OutputOutOfRange(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    BackwardReference,
    SingleUse,
    TypeCorrectness,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::BackwardReference => "backward-reference",
            Rule::SingleUse => "single-use",
            Rule::TypeCorrectness => "type-correctness",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Violation {
    pub instance: usize,
    pub rule: Rule,
    pub position: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violation at instance {}, ref position {}",
            self.rule, self.instance, self.position
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("ill-formed testcase: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    IllFormed(Vec<Violation>),
}

impl ValidationError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationError::IllFormed(v) => v,
            ValidationError::Structure(_) => &[],
        }
    }
}

/// Checks backward references, single-use outputs and type correctness.
///
/// Every violation is reported, ordered by instance, then rule, then ref
/// position. A repeated reference is charged to its later use. Type checks
/// are skipped for references that already point forward.
pub fn validate(spec: &Specification, t: &Testcase) -> Result<(), ValidationError> {
    t.check_structure(spec)?;

    let mut out_types: Vec<TypeId> = Vec::new();
    let mut used: HashSet<u32> = HashSet::new();
    let mut violations = Vec::new();

    for (i, inst) in t.instances.iter().enumerate() {
        let block = spec.block(inst.block);
        let produced = out_types.len() as u32;
        for (j, &k) in inst.refs.iter().enumerate() {
            if k >= produced {
                violations.push(Violation {
                    instance: i,
                    rule: Rule::BackwardReference,
                    position: j,
                });
            } else if out_types[k as usize] != block.inputs[j].ty {
                violations.push(Violation {
                    instance: i,
                    rule: Rule::TypeCorrectness,
                    position: j,
                });
            }
            if !used.insert(k) {
                violations.push(Violation {
                    instance: i,
                    rule: Rule::SingleUse,
                    position: j,
                });
            }
        }
        out_types.extend(block.outputs.iter().map(|p| p.ty));
    }

    if violations.is_empty() {
        Ok(())
    } else {
        violations.sort();
        Err(ValidationError::IllFormed(violations))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_spec;

    // A:()->Doc  B:(Doc)->(Doc,Elem)  C:(Doc,Elem)->()
    fn abc() -> Specification {
        parse_spec(
            r#"{"types":["Doc","Elem"],"blocks":[
            {"name":"A","code":"x","outputs":[{"name":"d","type":"Doc"}]},
            {"name":"B","code":"x","inputs":[{"name":"d","type":"Doc"}],
             "outputs":[{"name":"d","type":"Doc"},{"name":"e","type":"Elem"}]},
            {"name":"C","code":"x","inputs":[{"name":"d","type":"Doc"},{"name":"e","type":"Elem"}]}]}"#,
        )
        .unwrap()
    }

    fn inst(b: u32, refs: &[u32]) -> BlockInstance {
        BlockInstance::new(BlockId(b), refs.to_vec())
    }

    #[test]
    fn empty_testcase_is_well_formed() {
        assert_eq!(validate(&abc(), &Testcase::default()), Ok(()));
    }

    #[test]
    fn producer_then_consumer() {
        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0])]);
        assert_eq!(validate(&abc(), &t), Ok(()));
    }

    #[test]
    fn reused_output_of_wrong_type() {
        let t = Testcase::new(vec![inst(0, &[]), inst(2, &[0, 0])]);
        let err = validate(&abc(), &t).unwrap_err();
        assert_eq!(
            err.violations(),
            &[
                Violation {
                    instance: 1,
                    rule: Rule::SingleUse,
                    position: 1
                },
                Violation {
                    instance: 1,
                    rule: Rule::TypeCorrectness,
                    position: 1
                },
            ]
        );
    }

    #[test]
    fn nothing_produced_yet() {
        let t = Testcase::new(vec![inst(1, &[0])]);
        assert_eq!(
            validate(&abc(), &t).unwrap_err().violations(),
            &[Violation {
                instance: 0,
                rule: Rule::BackwardReference,
                position: 0
            }]
        );
    }

    #[test]
    fn structural_errors_are_distinct() {
        let t = Testcase::new(vec![inst(7, &[])]);
        assert!(matches!(
            validate(&abc(), &t),
            Err(ValidationError::Structure(StructureError::BlockOutOfRange { .. }))
        ));
        let t = Testcase::new(vec![inst(1, &[])]);
        assert!(matches!(
            validate(&abc(), &t),
            Err(ValidationError::Structure(StructureError::ArityMismatch { .. }))
        ));
    }

    #[test]
    fn flat_output_types() {
        let spec = abc();
        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0])]);
        let doc = spec.type_id("Doc").unwrap();
        let elem = spec.type_id("Elem").unwrap();
        assert_eq!(t.flat_output_type(&spec, 0), Ok(doc));
        assert_eq!(t.flat_output_type(&spec, 1), Ok(doc));
        assert_eq!(t.flat_output_type(&spec, 2), Ok(elem));
        assert_eq!(
            t.flat_output_type(&spec, 3),
            Err(StructureError::OutputOutOfRange(3))
        );
    }

    #[test]
    fn flat_indexing_is_a_bijection() {
        let spec = abc();
        let t = Testcase::new(vec![inst(0, &[]), inst(1, &[0]), inst(2, &[1, 2])]);
        let offsets = t.output_offsets(&spec);
        let total = t.total_outputs(&spec);
        let mut seen = HashSet::new();
        for k in 0..total {
            let (p, q) = t.locate_output(&spec, k).unwrap();
            assert_eq!(offsets[p] + q as u32, k);
            assert!(seen.insert((p, q)));
        }
        assert_eq!(seen.len(), total as usize);
        assert_eq!(t.locate_output(&spec, total), None);
    }

    #[test]
    fn param_coercion_preserves_fixed_width() {
        let v = ParamValue::str(b"abcdef".to_vec());
        assert_eq!(v.coerce(ParamKind::Fixed(4)).bytes, b"abcd");
        assert_eq!(v.coerce(ParamKind::Fixed(8)).bytes, b"abcdef\0\0");
        assert!(v.coerce(ParamKind::Fixed(8)).is_well_shaped());
        assert_eq!(ParamValue::default_for(ParamKind::Fixed(2)).bytes, vec![0, 0]);
        assert!(ParamValue::default_for(ParamKind::File).bytes.is_empty());
    }
}
