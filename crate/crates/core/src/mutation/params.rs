//! Fresh parameter values and byte-level mutation of existing ones.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::testcase::{ParamKind, ParamValue};

const INTERESTING: [u8; 8] = [0x00, 0x01, 0x02, 0x7f, 0x80, 0xfe, 0xff, 0x10];
const MAX_STR: usize = 12;
const MAX_FILE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteMutator {
    BitFlip,
    ByteSet,
    Delete,
    Insert,
    Duplicate,
    Splice,
}

impl ByteMutator {
    pub const ALL: [ByteMutator; 6] = [
        ByteMutator::BitFlip,
        ByteMutator::ByteSet,
        ByteMutator::Delete,
        ByteMutator::Insert,
        ByteMutator::Duplicate,
        ByteMutator::Splice,
    ];

    /// Mutators that keep the length unchanged, the only ones allowed on
    /// fixed-width values.
    pub const IN_PLACE: [ByteMutator; 4] = [
        ByteMutator::BitFlip,
        ByteMutator::ByteSet,
        ByteMutator::Duplicate,
        ByteMutator::Splice,
    ];
}

fn random_text<R: Rng>(rng: &mut R, max: usize) -> Vec<u8> {
    let len = rng.gen_range(1..=max);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.9) {
                rng.gen_range(b'a'..=b'z')
            } else {
                rng.gen()
            }
        })
        .collect()
}

/// A fresh value of `kind`; variable-size values come from `hints` with
/// probability `p_hint` when any are available.
pub fn random_value<R: Rng>(rng: &mut R, kind: ParamKind, hints: &[Vec<u8>], p_hint: f64) -> ParamValue {
    let bytes = match kind {
        ParamKind::Fixed(w) => {
            let w = w as usize;
            match rng.gen_range(0..4) {
                0 => vec![0; w],
                1 => {
                    let mut b = vec![0; w];
                    if w > 0 {
                        b[0] = *INTERESTING.choose(rng).expect("non-empty");
                    }
                    b
                }
                _ => (0..w).map(|_| rng.gen()).collect(),
            }
        }
        ParamKind::Str | ParamKind::File => {
            if !hints.is_empty() && rng.gen_bool(p_hint) {
                hints.choose(rng).expect("non-empty").clone()
            } else if kind == ParamKind::Str {
                random_text(rng, MAX_STR)
            } else {
                random_text(rng, MAX_FILE)
            }
        }
    };
    ParamValue { kind, bytes }
}

/// Applies one byte-level mutation in place. `donor` supplies bytes for
/// splicing. Fixed-width values never change length.
pub fn mutate_bytes<R: Rng>(rng: &mut R, value: &mut ParamValue, donor: Option<&[u8]>) {
    let variable = value.kind.is_variable();
    let ops: &[ByteMutator] = if variable {
        &ByteMutator::ALL
    } else {
        &ByteMutator::IN_PLACE
    };
    let op = *ops.choose(rng).expect("non-empty");
    apply(rng, op, &mut value.bytes, variable, donor);
    debug_assert!(value.is_well_shaped());
}

fn apply<R: Rng>(rng: &mut R, op: ByteMutator, bytes: &mut Vec<u8>, variable: bool, donor: Option<&[u8]>) {
    let len = bytes.len();
    if len == 0 {
        if variable {
            let n = rng.gen_range(1..=4);
            bytes.extend((0..n).map(|_| rng.gen_range(b'a'..=b'z')));
        }
        return;
    }
    match op {
        ByteMutator::BitFlip => {
            let i = rng.gen_range(0..len);
            bytes[i] ^= 1 << rng.gen_range(0..8);
        }
        ByteMutator::ByteSet => {
            let i = rng.gen_range(0..len);
            bytes[i] = if rng.gen_bool(0.5) {
                *INTERESTING.choose(rng).expect("non-empty")
            } else {
                rng.gen()
            };
        }
        ByteMutator::Delete => {
            let start = rng.gen_range(0..len);
            let n = rng.gen_range(1..=(len - start).min(4));
            bytes.drain(start..start + n);
        }
        ByteMutator::Insert => {
            let at = rng.gen_range(0..=len);
            let n = rng.gen_range(1..=4);
            let fill: Vec<u8> = (0..n)
                .map(|_| if rng.gen_bool(0.8) { rng.gen_range(b'a'..=b'z') } else { rng.gen() })
                .collect();
            bytes.splice(at..at, fill);
        }
        ByteMutator::Duplicate => {
            let start = rng.gen_range(0..len);
            let n = rng.gen_range(1..=(len - start).min(8));
            let chunk = bytes[start..start + n].to_vec();
            if variable {
                let at = rng.gen_range(0..=len);
                bytes.splice(at..at, chunk);
            } else {
                let at = rng.gen_range(0..=len - n);
                bytes[at..at + n].copy_from_slice(&chunk);
            }
        }
        ByteMutator::Splice => match donor.filter(|d| !d.is_empty()) {
            Some(d) => {
                if variable {
                    let cut = rng.gen_range(0..=len);
                    let from = rng.gen_range(0..d.len());
                    bytes.truncate(cut);
                    bytes.extend_from_slice(&d[from..]);
                } else {
                    let n = d.len().min(len);
                    let at = rng.gen_range(0..=len - n);
                    bytes[at..at + n].copy_from_slice(&d[..n]);
                }
            }
            None => apply(rng, ByteMutator::ByteSet, bytes, variable, None),
        },
    }
}
