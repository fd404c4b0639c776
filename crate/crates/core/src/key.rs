//! Canonical join-key encoding.
//!
//! Keys are compared as raw bytes everywhere in the backend (memtables, SST
//! blocks, index search), so the encoding has to be both injective and
//! order-preserving:
//!
//! - integer: `0x01` then the big-endian two's complement with the sign bit flipped;
//! - string: `0x02`, the bytes with `0x00` escaped as `0x00 0xFF`, then the terminator `0x00 0x01`.
//!
//! The terminator sorts below the escape, which keeps prefixes ordered
//! before their extensions in composite keys.

use alloc::vec::Vec;
use core::fmt;

use crate::value::Value;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct JoinKey(Vec<u8>);

impl JoinKey {
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a Value>) -> Self {
        let mut out = Vec::new();
        for v in values {
            match v {
                Value::Int(i) => {
                    out.push(0x01);
                    out.extend_from_slice(&((*i as u64) ^ (1u64 << 63)).to_be_bytes());
                }
                Value::Str(s) => {
                    out.push(0x02);
                    for &b in s.as_bytes() {
                        out.push(b);
                        if b == 0 {
                            out.push(0xFF);
                        }
                    }
                    out.extend_from_slice(&[0x00, 0x01]);
                }
            }
        }
        JoinKey(out)
    }

    pub fn int(v: i64) -> Self {
        Self::from_values([&Value::Int(v)])
    }

    /// Wraps bytes that are already in canonical form (read back from disk).
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        JoinKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for JoinKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("JoinKey(")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        f.write_str(")")
    }
}
