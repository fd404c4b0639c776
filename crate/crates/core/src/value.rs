//! Scalar field values and the row payload codec.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

const TAG_INT: u8 = 1;
const TAG_STR: u8 = 2;

/// A single field value. Only the two scalar types the join key encoding
/// supports are modelled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    /// Parses a textual field: anything that parses as `i64` becomes an
    /// integer, everything else a string.
    pub fn parse(text: &str) -> Value {
        match text.parse::<i64>() {
            Ok(v) => Value::Int(v),
            Err(_) => Value::Str(String::from(text)),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Str(_) => None,
        }
    }

    fn encoded_len(&self) -> usize {
        match self {
            Value::Int(_) => 9,
            Value::Str(s) => 5 + s.len(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(String::from(v))
    }
}

/// An ordered list of field values; one stream record.
pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("payload truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown value tag {tag} at byte {offset}")]
    BadTag { tag: u8, offset: usize },
    #[error("string field is not valid utf-8")]
    Utf8,
    #[error("{0} trailing bytes after payload")]
    Trailing(usize),
}

/// Encodes a row as `count:u32` followed by tagged values (little-endian).
pub fn encode_row(row: &[Value]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + row.iter().map(Value::encoded_len).sum::<usize>());
    out.extend_from_slice(&(row.len() as u32).to_le_bytes());
    for v in row {
        match v {
            Value::Int(i) => {
                out.push(TAG_INT);
                out.extend_from_slice(&i.to_le_bytes());
            }
            Value::Str(s) => {
                out.push(TAG_STR);
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }
    out
}

pub fn decode_row(bytes: &[u8]) -> Result<Row, DecodeError> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32()? as usize;
    let mut row = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let offset = r.pos;
        match r.u8()? {
            TAG_INT => row.push(Value::Int(i64::from_le_bytes(r.array::<8>()?))),
            TAG_STR => {
                let len = r.u32()? as usize;
                let raw = r.take(len)?;
                let s = core::str::from_utf8(raw).map_err(|_| DecodeError::Utf8)?;
                row.push(Value::Str(String::from(s)));
            }
            tag => return Err(DecodeError::BadTag { tag, offset }),
        }
    }
    if r.pos != bytes.len() {
        return Err(DecodeError::Trailing(bytes.len() - r.pos));
    }
    Ok(row)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated(self.pos))?;
        let s = self.bytes.get(self.pos..end).ok_or(DecodeError::Truncated(self.pos))?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array::<4>()?))
    }
}
