use alloc::vec;
use alloc::vec::Vec;

use super::{check_streams, probe_and_emit, InputEvent, JoinError, MemState, StateBackend, StreamDef};
use crate::lsm::StoredTuple;
use crate::value::encode_row;

/// Per-entry bookkeeping charged on top of key and payload bytes.
pub const ENTRY_OVERHEAD_BYTES: u64 = 48;

/// Multi-way join over in-memory state that aborts once its estimated
/// state size exceeds a byte cap. After the abort every call fails.
pub struct CappedHashJoin {
    streams: Vec<StreamDef>,
    states: Vec<MemState>,
    cap_bytes: u64,
    used_bytes: u64,
    next_seq: u64,
    aborted: bool,
    probe_counts: Vec<u64>,
    rejected: u64,
    emitted: u64,
}

impl CappedHashJoin {
    pub fn new(streams: Vec<StreamDef>, cap_bytes: u64) -> Result<Self, JoinError> {
        check_streams(&streams, streams.len())?;
        if cap_bytes == 0 {
            return Err(JoinError::Config(alloc::string::String::from("cap_bytes must be positive")));
        }
        let n = streams.len();
        Ok(CappedHashJoin {
            streams,
            states: vec![MemState::new(); n],
            cap_bytes,
            used_bytes: 0,
            next_seq: 1,
            aborted: false,
            probe_counts: vec![0; n],
            rejected: 0,
            emitted: 0,
        })
    }

    pub fn used_bytes(&self) -> u64 {
        self.used_bytes
    }

    pub fn cap_bytes(&self) -> u64 {
        self.cap_bytes
    }

    pub fn aborted(&self) -> bool {
        self.aborted
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Estimated bytes a stored row costs.
    pub fn charge(key_len: usize, payload_len: usize) -> u64 {
        (key_len + payload_len) as u64 + ENTRY_OVERHEAD_BYTES
    }

    pub fn process_with(&mut self, event: &InputEvent, now_ms: u64, emit: &mut dyn FnMut(&[&StoredTuple])) -> Result<u64, JoinError> {
        if self.aborted {
            return Err(JoinError::OutOfMemory { used_bytes: self.used_bytes, cap_bytes: self.cap_bytes });
        }
        let own = event.stream;
        let Some(def) = self.streams.get(own) else {
            return Err(JoinError::UnknownStream { stream: own, streams: self.streams.len() });
        };
        let key = match def.key_of(&event.row) {
            Ok(k) => k,
            Err(e) => {
                self.rejected += 1;
                return Err(e);
            }
        };
        let tuple = StoredTuple::new(self.next_seq, event.ts, encode_row(&event.row));
        self.next_seq += 1;
        self.used_bytes += Self::charge(key.len(), tuple.payload.len());
        self.states[own].insert(key.clone(), tuple.clone()).map_err(|source| JoinError::Backend { stream: own, source })?;
        if self.used_bytes > self.cap_bytes {
            self.aborted = true;
            return Err(JoinError::OutOfMemory { used_bytes: self.used_bytes, cap_bytes: self.cap_bytes });
        }
        let n = probe_and_emit(&mut self.states, own, &key, &tuple, now_ms, true, &mut self.probe_counts, emit)?;
        self.emitted += n;
        Ok(n)
    }
}
