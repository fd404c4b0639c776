use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::key::JoinKey;
use crate::lsm::{BackendCounters, FileStore, LsmBackend, LsmError, StoredTuple};

/// Per-stream multimap state as seen by a join operator.
pub trait StateBackend {
    fn insert(&mut self, key: JoinKey, tuple: StoredTuple) -> Result<(), LsmError>;

    /// Every live tuple under `key`, ordered by `seq`.
    fn probe(&mut self, key: &JoinKey, now_ms: u64) -> Result<Vec<StoredTuple>, LsmError>;

    /// Runs deferred work (flushes); operators call it between events.
    fn maintain(&mut self) -> Result<(), LsmError> {
        Ok(())
    }

    fn counters(&self) -> BackendCounters {
        BackendCounters::default()
    }
}

impl<S: FileStore> StateBackend for LsmBackend<S> {
    fn insert(&mut self, key: JoinKey, tuple: StoredTuple) -> Result<(), LsmError> {
        LsmBackend::insert(self, key, tuple)
    }

    fn probe(&mut self, key: &JoinKey, now_ms: u64) -> Result<Vec<StoredTuple>, LsmError> {
        LsmBackend::probe(self, key, now_ms)
    }

    fn maintain(&mut self) -> Result<(), LsmError> {
        self.flush_all()
    }

    fn counters(&self) -> BackendCounters {
        LsmBackend::counters(self)
    }
}

/// Plain in-memory multimap; never expires anything.
#[derive(Debug, Default, Clone)]
pub struct MemState {
    map: BTreeMap<JoinKey, Vec<StoredTuple>>,
    entries: usize,
}

impl MemState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> usize {
        self.entries
    }
}

impl StateBackend for MemState {
    fn insert(&mut self, key: JoinKey, tuple: StoredTuple) -> Result<(), LsmError> {
        self.map.entry(key).or_default().push(tuple);
        self.entries += 1;
        Ok(())
    }

    fn probe(&mut self, key: &JoinKey, _now_ms: u64) -> Result<Vec<StoredTuple>, LsmError> {
        Ok(self.map.get(key).cloned().unwrap_or_default())
    }
}
