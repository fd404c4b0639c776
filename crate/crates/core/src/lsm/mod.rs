//! Per-stream persistent multimap state.
//!
//! Every join key maps to a *list* of tuples. Writes go to the active
//! memtable; a full memtable is frozen and later flushed into a level-0 SST
//! file; level files are merged downward by whole-level compaction. Probes
//! union every tier, since a key's tuples may be spread over all of them.

mod backend;
mod bloom;
mod cache;
mod memtable;
mod sst;
mod store;

use alloc::string::String;

use thiserror::Error;

pub use backend::LsmBackend;
pub use bloom::{fnv1a64, BloomFilter};
pub use cache::{BlockCache, BlockId};
pub use memtable::MemTable;
pub use sst::{decode_block, sst_file_name, Block, IndexEntry, SstBuilder, SstFile, FOOTER_LEN, SST_MAGIC, SST_VERSION};
pub use store::{FileStore, MemStore, StoreError};

use crate::value::DecodeError;

/// One stored stream record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredTuple {
    /// Insertion sequence number, unique and increasing within one backend.
    pub seq: u64,
    /// Arrival timestamp in milliseconds.
    pub ts: u64,
    pub payload: alloc::sync::Arc<[u8]>,
}

impl StoredTuple {
    pub fn new(seq: u64, ts: u64, payload: impl Into<alloc::sync::Arc<[u8]>>) -> Self {
        StoredTuple { seq, ts, payload: payload.into() }
    }

    pub(crate) fn expired(&self, ttl_ms: Option<u64>, now_ms: u64) -> bool {
        match ttl_ms {
            Some(ttl) => self.ts.saturating_add(ttl) < now_ms,
            None => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendConfig {
    /// Tuples an active memtable holds before it is frozen.
    pub memtable_capacity_entries: usize,
    pub block_cache_bytes: usize,
    /// Target encoded size of one SST data block.
    pub block_bytes: usize,
    /// Level-0 file count that triggers a level-0 compaction.
    pub l0_file_trigger: usize,
    /// Size ratio between adjacent levels.
    pub level_fanout: usize,
    /// Retention threshold; `None` keeps tuples forever.
    pub ttl_ms: Option<u64>,
    pub bloom_bits_per_key: u32,
    pub bloom_hashes: u32,
    /// Number of levels; the last one is never compacted further.
    pub max_levels: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            memtable_capacity_entries: 4096,
            block_cache_bytes: 8 << 20,
            block_bytes: 4096,
            l0_file_trigger: 4,
            level_fanout: 10,
            ttl_ms: None,
            bloom_bits_per_key: 10,
            bloom_hashes: 7,
            max_levels: 7,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LsmError> {
        let positive = [
            ("memtable_capacity_entries", self.memtable_capacity_entries),
            ("block_bytes", self.block_bytes),
            ("l0_file_trigger", self.l0_file_trigger),
            ("bloom_bits_per_key", self.bloom_bits_per_key as usize),
            ("bloom_hashes", self.bloom_hashes as usize),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(LsmError::InvalidConfig(name));
        }
        if self.ttl_ms == Some(0) {
            return Err(LsmError::InvalidConfig("ttl_ms"));
        }
        if self.level_fanout < 2 {
            return Err(LsmError::InvalidConfig("level_fanout"));
        }
        if self.max_levels < 2 {
            return Err(LsmError::InvalidConfig("max_levels"));
        }
        Ok(())
    }

    /// Tuple-count budget of `level` (>= 1). Level 1 holds what `l0_file_trigger`
    /// full memtables hold, each deeper level `level_fanout` times more.
    pub fn level_target_entries(&self, level: usize) -> u64 {
        let base = (self.memtable_capacity_entries as u64).saturating_mul(self.l0_file_trigger as u64);
        let mut target = base.saturating_mul(self.level_fanout as u64);
        for _ in 1..level {
            target = target.saturating_mul(self.level_fanout as u64);
        }
        target
    }
}

/// Monotone I/O counters for one backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BackendCounters {
    /// Data blocks fetched from the file store on the probe path.
    pub blocks_read_from_disk: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub bytes_written: u64,
    pub flush_count: u64,
    pub compaction_count: u64,
    pub probes: u64,
    /// SST files skipped because their Bloom filter ruled the key out.
    pub bloom_skips: u64,
}

impl BackendCounters {
    /// Field-wise sum, used to aggregate per-stream counters.
    pub fn merged(&self, other: &BackendCounters) -> BackendCounters {
        BackendCounters {
            blocks_read_from_disk: self.blocks_read_from_disk + other.blocks_read_from_disk,
            cache_hits: self.cache_hits + other.cache_hits,
            cache_misses: self.cache_misses + other.cache_misses,
            bytes_written: self.bytes_written + other.bytes_written,
            flush_count: self.flush_count + other.flush_count,
            compaction_count: self.compaction_count + other.compaction_count,
            probes: self.probes + other.probes,
            bloom_skips: self.bloom_skips + other.bloom_skips,
        }
    }
}

#[derive(Debug, Error)]
pub enum LsmError {
    #[error("storage error on {file}: {source}")]
    Storage {
        file: String,
        #[source]
        source: StoreError,
    },
    #[error("corrupt sst file {file}: {reason}")]
    Corruption { file: String, reason: &'static str },
    #[error("corrupt tuple payload in {file}: {source}")]
    Payload {
        file: String,
        #[source]
        source: DecodeError,
    },
    #[error("sequence number {seq} not greater than last inserted {last}")]
    SeqOutOfOrder { seq: u64, last: u64 },
    #[error("memtable is frozen")]
    Frozen,
    #[error("cannot compact level {level}: backend has {max_levels} levels")]
    InvalidLevel { level: usize, max_levels: usize },
    #[error("invalid backend config: {0} out of range")]
    InvalidConfig(&'static str),
}
