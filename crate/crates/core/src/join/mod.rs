//! Streaming equi-join operators.
//!
//! [`UmJoin`] keeps one state backend per input stream and answers every
//! event with insert-then-probe across all other streams. [`BinaryJoinTree`]
//! is the baseline that materializes intermediate results in two-way join
//! nodes. [`CappedHashJoin`] runs the multi-way algorithm over in-memory
//! state with a byte budget.
//!
//! Operators emit each output row as a slice of [`StoredTuple`]s with one
//! entry per stream, indexed by stream.

mod bjt;
mod capped;
mod state;
mod umjoin;

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub use bjt::{BinaryJoinTree, BjtNode, BjtTopology, JoinTree, KeyRef, Partial, Side};
pub use capped::{CappedHashJoin, ENTRY_OVERHEAD_BYTES};
pub use state::{MemState, StateBackend};
pub use umjoin::UmJoin;

use crate::key::JoinKey;
use crate::lsm::{LsmError, StoredTuple};
use crate::value::{DecodeError, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamDef {
    pub index: usize,
    pub name: String,
    pub schema: Vec<String>,
    /// Positions in `schema` forming the equi-join key, in key order.
    pub key_fields: Vec<usize>,
}

impl StreamDef {
    /// Resolves `key_fields` by name against `schema`.
    pub fn new(index: usize, name: impl Into<String>, schema: Vec<String>, key_fields: &[&str]) -> Result<Self, JoinError> {
        let name = name.into();
        if key_fields.is_empty() {
            return Err(JoinError::Config(alloc::format!("stream {name}: empty key")));
        }
        let key_fields = key_fields
            .iter()
            .map(|k| {
                schema.iter().position(|c| c == k).ok_or_else(|| JoinError::Config(alloc::format!("stream {name}: unknown key field {k}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StreamDef { index, name, schema, key_fields })
    }

    pub fn key_of(&self, row: &[Value]) -> Result<JoinKey, JoinError> {
        if row.len() != self.schema.len() {
            return Err(JoinError::MalformedEvent { stream: self.index, expected: self.schema.len(), found: row.len() });
        }
        Ok(JoinKey::from_values(self.key_fields.iter().map(|&i| &row[i])))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputEvent {
    pub stream: usize,
    pub row: Vec<Value>,
    pub ts: u64,
}

/// One output row: exactly one component per stream, in stream order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinedRow(pub Vec<StoredTuple>);

impl JoinedRow {
    pub fn from_refs(parts: &[&StoredTuple]) -> Self {
        JoinedRow(parts.iter().map(|t| (*t).clone()).collect())
    }

    /// `(stream, seq)` per component.
    pub fn provenance(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.0.iter().enumerate().map(|(i, t)| (i, t.seq))
    }
}

#[derive(Debug, Error)]
pub enum JoinError {
    #[error("state backend of stream {stream}: {source}")]
    Backend {
        stream: usize,
        #[source]
        source: LsmError,
    },
    #[error("event for unknown stream {stream} (operator has {streams})")]
    UnknownStream { stream: usize, streams: usize },
    #[error("rejected event on stream {stream}: {found} fields, schema has {expected}")]
    MalformedEvent { stream: usize, expected: usize, found: usize },
    #[error("intermediate payload: {0}")]
    Payload(#[from] DecodeError),
    #[error("state of {used_bytes} bytes exceeds cap of {cap_bytes} bytes")]
    OutOfMemory { used_bytes: u64, cap_bytes: u64 },
    #[error("operator configuration: {0}")]
    Config(String),
}

impl JoinError {
    /// Rejected events are counted and skipped; every other error halts a run.
    pub fn is_rejected_event(&self) -> bool {
        matches!(self, JoinError::MalformedEvent { .. })
    }
}

/// Checks the invariants shared by the multi-way operators: streams indexed
/// `0..n`, at least two of them, and equal key arity.
pub(crate) fn check_streams(streams: &[StreamDef], backends: usize) -> Result<(), JoinError> {
    if streams.len() < 2 {
        return Err(JoinError::Config(String::from("a join needs at least two streams")));
    }
    if backends != streams.len() {
        return Err(JoinError::Config(alloc::format!("{} streams but {backends} backends", streams.len())));
    }
    if let Some((i, s)) = streams.iter().enumerate().find(|(i, s)| s.index != *i) {
        return Err(JoinError::Config(alloc::format!("stream {} listed at position {i}", s.name)));
    }
    let arity = streams[0].key_fields.len();
    if let Some(s) = streams.iter().find(|s| s.key_fields.len() != arity) {
        return Err(JoinError::Config(alloc::format!("stream {} key arity differs from stream {}", s.name, streams[0].name)));
    }
    Ok(())
}

/// Probes every stream except `own` in ascending order and emits the cross
/// product of the matches with `tuple`. Returns the number of rows emitted.
#[allow(clippy::too_many_arguments)]
pub(crate) fn probe_and_emit<B: StateBackend>(
    backends: &mut [B],
    own: usize,
    key: &JoinKey,
    tuple: &StoredTuple,
    now_ms: u64,
    short_circuit: bool,
    probe_counts: &mut [u64],
    emit: &mut dyn FnMut(&[&StoredTuple]),
) -> Result<u64, JoinError> {
    let n = backends.len();
    let mut matches: Vec<Vec<StoredTuple>> = Vec::with_capacity(n);
    let mut any_empty = false;
    for (i, backend) in backends.iter_mut().enumerate() {
        if i == own {
            matches.push(Vec::new());
            continue;
        }
        if any_empty && short_circuit {
            matches.push(Vec::new());
            continue;
        }
        probe_counts[i] += 1;
        let found = backend.probe(key, now_ms).map_err(|source| JoinError::Backend { stream: i, source })?;
        any_empty |= found.is_empty();
        matches.push(found);
    }
    if any_empty {
        return Ok(0);
    }
    Ok(cross_product(&matches, own, tuple, emit))
}

/// Odometer over `matches`, with slot `own` fixed to `tuple`.
fn cross_product(matches: &[Vec<StoredTuple>], own: usize, tuple: &StoredTuple, emit: &mut dyn FnMut(&[&StoredTuple])) -> u64 {
    let n = matches.len();
    let len = |i: usize| if i == own { 1 } else { matches[i].len() };
    let pick = |i: usize, j: usize| if i == own { tuple } else { &matches[i][j] };
    let mut idx = alloc::vec![0usize; n];
    let mut row: Vec<&StoredTuple> = (0..n).map(|i| pick(i, 0)).collect();
    let mut count = 0;
    loop {
        emit(&row);
        count += 1;
        let mut i = n;
        loop {
            if i == 0 {
                return count;
            }
            i -= 1;
            idx[i] += 1;
            if idx[i] < len(i) {
                row[i] = pick(i, idx[i]);
                break;
            }
            idx[i] = 0;
            row[i] = pick(i, 0);
        }
    }
}
