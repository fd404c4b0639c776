use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{LsmError, StoredTuple};
use crate::key::JoinKey;

/// Ordered in-memory write buffer: join key -> tuples in insertion order.
#[derive(Debug, Default, Clone)]
pub struct MemTable {
    entries: BTreeMap<JoinKey, Vec<StoredTuple>>,
    entry_count: usize,
    frozen: bool,
}

impl MemTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: JoinKey, tuple: StoredTuple) -> Result<(), LsmError> {
        if self.frozen {
            return Err(LsmError::Frozen);
        }
        self.entries.entry(key).or_default().push(tuple);
        self.entry_count += 1;
        Ok(())
    }

    pub fn get(&self, key: &JoinKey) -> &[StoredTuple] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Number of stored tuples (not keys).
    pub fn entry_count(&self) -> usize {
        self.entry_count
    }

    pub fn key_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_count == 0
    }

    /// Keys in ascending byte order.
    pub fn iter(&self) -> impl Iterator<Item = (&JoinKey, &[StoredTuple])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }
}
