use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::bloom::fnv1a64;
use super::cache::BlockCache;
use super::memtable::MemTable;
use super::sst::{sst_file_name, SstBuilder, SstFile};
use super::store::FileStore;
use super::{BackendConfig, BackendCounters, LsmError, StoredTuple};
use crate::key::JoinKey;

/// LSM-tree multimap for one input stream.
///
/// Flushing is synchronous: a full memtable is frozen on insert and stays
/// probe-visible until [`flush`](Self::flush) writes it to level 0. A flush
/// that fills level 0 compacts inline, and compactions cascade down while a
/// level exceeds its tuple budget.
pub struct LsmBackend<S> {
    config: BackendConfig,
    store: S,
    active: MemTable,
    /// Oldest first.
    frozen: VecDeque<MemTable>,
    /// Files of each level, in creation order.
    levels: Vec<Vec<SstFile>>,
    cache: BlockCache,
    counters: BackendCounters,
    next_file_seq: u64,
    last_seq: Option<u64>,
    clock_ms: u64,
}

impl<S: FileStore> LsmBackend<S> {
    pub fn new(config: BackendConfig, store: S) -> Result<Self, LsmError> {
        config.validate()?;
        Ok(LsmBackend {
            cache: BlockCache::new(config.block_cache_bytes),
            levels: vec![Vec::new(); config.max_levels],
            config,
            store,
            active: MemTable::new(),
            frozen: VecDeque::new(),
            counters: BackendCounters::default(),
            next_file_seq: 1,
            last_seq: None,
            clock_ms: 0,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn counters(&self) -> BackendCounters {
        self.counters
    }

    pub fn cache(&self) -> &BlockCache {
        &self.cache
    }

    /// Moves the compaction clock forward; it never goes back.
    pub fn advance_clock(&mut self, now_ms: u64) {
        self.clock_ms = self.clock_ms.max(now_ms);
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn active_entries(&self) -> usize {
        self.active.entry_count()
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.len()
    }

    pub fn frozen_entries(&self) -> usize {
        self.frozen.iter().map(MemTable::entry_count).sum()
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_files(&self, level: usize) -> &[SstFile] {
        &self.levels[level]
    }

    /// Tuples stored in `level`'s files.
    pub fn level_entries(&self, level: usize) -> u64 {
        self.levels[level].iter().map(|f| f.tuple_count).sum()
    }

    pub fn files(&self) -> impl Iterator<Item = &SstFile> {
        self.levels.iter().flatten()
    }

    pub fn insert(&mut self, key: JoinKey, tuple: StoredTuple) -> Result<(), LsmError> {
        if let Some(last) = self.last_seq {
            if tuple.seq <= last {
                return Err(LsmError::SeqOutOfOrder { seq: tuple.seq, last });
            }
        }
        self.last_seq = Some(tuple.seq);
        self.advance_clock(tuple.ts);
        self.active.insert(key, tuple)?;
        if self.active.entry_count() >= self.config.memtable_capacity_entries {
            self.freeze_active();
        }
        Ok(())
    }

    /// Rotates the active memtable into the frozen queue (no-op when empty).
    pub fn freeze_active(&mut self) {
        if self.active.is_empty() {
            return;
        }
        let mut table = core::mem::take(&mut self.active);
        table.freeze();
        self.frozen.push_back(table);
    }

    /// All live tuples under `key` from every tier, ordered by `seq`.
    pub fn probe(&mut self, key: &JoinKey, now_ms: u64) -> Result<Vec<StoredTuple>, LsmError> {
        self.counters.probes += 1;
        let mut out: Vec<StoredTuple> = self.active.get(key).to_vec();
        for table in self.frozen.iter().rev() {
            out.extend_from_slice(table.get(key));
        }
        let hash = fnv1a64(key.as_bytes());
        for level in &self.levels {
            for file in level.iter().rev() {
                let Some(bi) = file.block_for(key) else { continue };
                if !file.bloom.may_contain_hash(hash) {
                    self.counters.bloom_skips += 1;
                    continue;
                }
                let id = (file.file_seq, file.index[bi].offset);
                let block = match self.cache.get(&id) {
                    Some(b) => {
                        self.counters.cache_hits += 1;
                        b
                    }
                    None => {
                        self.counters.cache_misses += 1;
                        self.counters.blocks_read_from_disk += 1;
                        let b = Arc::new(file.read_block(&self.store, bi)?);
                        self.cache.insert(id, b.clone());
                        b
                    }
                };
                if let Some(tuples) = block.get(key) {
                    out.extend_from_slice(tuples);
                }
            }
        }
        if self.config.ttl_ms.is_some() {
            out.retain(|t| !t.expired(self.config.ttl_ms, now_ms));
        }
        out.sort_unstable_by_key(|t| t.seq);
        Ok(out)
    }

    /// Writes the oldest frozen memtable as a new level-0 file. On failure
    /// the memtable stays queued so the flush can be retried.
    pub fn flush(&mut self) -> Result<(), LsmError> {
        let Some(table) = self.frozen.front() else { return Ok(()) };
        let mut builder = SstBuilder::new(self.config.block_bytes);
        for (key, tuples) in table.iter() {
            builder.add(key, tuples);
        }
        let Some(built) = builder.finish(0, self.config.bloom_bits_per_key, self.config.bloom_hashes) else {
            self.frozen.pop_front();
            return Ok(());
        };
        let file_seq = self.next_file_seq;
        let name = sst_file_name(0, file_seq);
        self.store.write_file(&name, &built.bytes).map_err(|source| LsmError::Storage { file: name.clone(), source })?;
        self.next_file_seq += 1;
        self.frozen.pop_front();
        self.levels[0].push(SstFile::from_built(&built, name, 0, file_seq));
        self.counters.flush_count += 1;
        self.counters.bytes_written += built.bytes.len() as u64;
        if self.levels[0].len() >= self.config.l0_file_trigger {
            self.compact(0)?;
        }
        Ok(())
    }

    /// Flushes every frozen memtable.
    pub fn flush_all(&mut self) -> Result<(), LsmError> {
        while !self.frozen.is_empty() {
            self.flush()?;
        }
        Ok(())
    }

    /// Merges all of `level` with all of `level + 1` into a new file at
    /// `level + 1`. Expired tuples are dropped. The replaced files are deleted
    /// only after the merged file is written; until then they stay authoritative.
    pub fn compact(&mut self, level: usize) -> Result<(), LsmError> {
        let max_levels = self.levels.len();
        if level + 1 >= max_levels {
            return Err(LsmError::InvalidLevel { level, max_levels });
        }
        if self.levels[level].is_empty() {
            return Ok(());
        }
        let target = level + 1;
        let inputs: Vec<&SstFile> = self.levels[level].iter().chain(&self.levels[target]).collect();
        let mut cursors: Vec<MergeCursor<'_>> = inputs.iter().map(|f| MergeCursor::new(f)).collect();
        for c in &mut cursors {
            c.fill(&self.store)?;
        }

        let mut builder = SstBuilder::new(self.config.block_bytes);
        let ttl = self.config.ttl_ms;
        let now = self.clock_ms;
        while let Some(min_key) = cursors.iter().filter_map(MergeCursor::head_key).min().cloned() {
            let mut merged: Vec<StoredTuple> = Vec::new();
            for c in &mut cursors {
                if c.head_key() == Some(&min_key) {
                    let (_, tuples) = c.pop(&self.store)?;
                    merged.extend(tuples);
                }
            }
            merged.retain(|t| !t.expired(ttl, now));
            merged.sort_unstable_by_key(|t| t.seq);
            if !merged.is_empty() {
                builder.add(&min_key, &merged);
            }
        }
        drop(cursors);

        let new_file = match builder.finish(target, self.config.bloom_bits_per_key, self.config.bloom_hashes) {
            Some(built) => {
                let file_seq = self.next_file_seq;
                let name = sst_file_name(target, file_seq);
                self.store.write_file(&name, &built.bytes).map_err(|source| LsmError::Storage { file: name.clone(), source })?;
                self.next_file_seq += 1;
                self.counters.bytes_written += built.bytes.len() as u64;
                Some(SstFile::from_built(&built, name, target, file_seq))
            }
            None => None,
        };

        let mut replaced: Vec<SstFile> = core::mem::take(&mut self.levels[level]);
        replaced.append(&mut self.levels[target]);
        self.levels[target].extend(new_file);
        self.counters.compaction_count += 1;

        let mut first_err: Option<LsmError> = None;
        for f in &replaced {
            self.cache.evict_file(f.file_seq);
            if let Err(source) = self.store.delete_file(&f.name) {
                first_err.get_or_insert(LsmError::Storage { file: f.name.clone(), source });
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }

        if target + 1 < max_levels && self.level_entries(target) > self.config.level_target_entries(target) {
            self.compact(target)?;
        }
        Ok(())
    }
}

/// Sequential reader over one input file of a compaction.
struct MergeCursor<'a> {
    file: &'a SstFile,
    next_block: usize,
    pending: VecDeque<(JoinKey, Vec<StoredTuple>)>,
}

impl<'a> MergeCursor<'a> {
    fn new(file: &'a SstFile) -> Self {
        MergeCursor { file, next_block: 0, pending: VecDeque::new() }
    }

    fn fill<S: FileStore>(&mut self, store: &S) -> Result<(), LsmError> {
        while self.pending.is_empty() && self.next_block < self.file.index.len() {
            let block = self.file.read_block(store, self.next_block)?;
            self.next_block += 1;
            self.pending.extend(block.entries);
        }
        Ok(())
    }

    fn head_key(&self) -> Option<&JoinKey> {
        self.pending.front().map(|(k, _)| k)
    }

    fn pop<S: FileStore>(&mut self, store: &S) -> Result<(JoinKey, Vec<StoredTuple>), LsmError> {
        let head = self
            .pending
            .pop_front()
            .ok_or_else(|| LsmError::Corruption { file: String::from(self.file.name.as_str()), reason: "merge cursor exhausted" })?;
        self.fill(store)?;
        Ok(head)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsm::{MemStore, StoreError};
    use alloc::collections::BTreeMap;
    use alloc::format;

    fn cfg(cap: usize) -> BackendConfig {
        BackendConfig { memtable_capacity_entries: cap, block_bytes: 128, block_cache_bytes: 4096, ..Default::default() }
    }

    fn t(seq: u64) -> StoredTuple {
        StoredTuple::new(seq, seq, format!("t{seq}").into_bytes())
    }

    fn seqs(v: &[StoredTuple]) -> Vec<u64> {
        v.iter().map(|t| t.seq).collect()
    }

    #[test]
    fn single_insert_probe() {
        let mut b = LsmBackend::new(cfg(8), MemStore::new()).unwrap();
        b.insert(JoinKey::int(5), t(1)).unwrap();
        assert_eq!(b.probe(&JoinKey::int(5), 0).unwrap(), [t(1)]);
        assert!(b.probe(&JoinKey::int(6), 0).unwrap().is_empty());
    }

    #[test]
    fn rotation_keeps_frozen_table_visible() {
        let mut b = LsmBackend::new(cfg(2), MemStore::new()).unwrap();
        for s in 1..=3 {
            b.insert(JoinKey::int(1), t(s)).unwrap();
        }
        assert_eq!((b.frozen_count(), b.frozen_entries(), b.active_entries()), (1, 2, 1));
        assert_eq!(seqs(&b.probe(&JoinKey::int(1), 0).unwrap()), [1, 2, 3]);
    }

    #[test]
    fn rejects_non_increasing_seq() {
        let mut b = LsmBackend::new(cfg(8), MemStore::new()).unwrap();
        b.insert(JoinKey::int(1), t(5)).unwrap();
        assert!(matches!(b.insert(JoinKey::int(1), t(5)), Err(LsmError::SeqOutOfOrder { seq: 5, last: 5 })));
    }

    #[test]
    fn flush_without_frozen_is_noop() {
        let mut b = LsmBackend::new(cfg(8), MemStore::new()).unwrap();
        b.flush().unwrap();
        assert_eq!(b.counters(), BackendCounters::default());
    }

    #[test]
    fn flush_writes_l0_file_with_bounds() {
        let mut b = LsmBackend::new(cfg(2), MemStore::new()).unwrap();
        b.insert(JoinKey::int(1), t(1)).unwrap();
        b.insert(JoinKey::int(2), t(2)).unwrap();
        b.flush().unwrap();
        assert_eq!(b.counters().flush_count, 1);
        let f = &b.level_files(0)[0];
        assert_eq!((f.min_key.clone(), f.max_key.clone(), f.tuple_count), (JoinKey::int(1), JoinKey::int(2), 2));
        assert_eq!(f.name, "L0-1.sst");
        let reopened = SstFile::open(b.store(), &f.name, f.file_seq).unwrap();
        assert_eq!(reopened.tuple_count, 2);
        assert_eq!(b.probe(&JoinKey::int(2), 0).unwrap(), [t(2)]);
    }

    #[test]
    fn fourth_flush_compacts_level0() {
        let mut b = LsmBackend::new(BackendConfig { l0_file_trigger: 4, ..cfg(1) }, MemStore::new()).unwrap();
        for s in 1..=4 {
            b.insert(JoinKey::int(s as i64 % 2), t(s)).unwrap();
            b.flush().unwrap();
        }
        let c = b.counters();
        assert_eq!((c.flush_count, c.compaction_count), (4, 1));
        assert!(b.level_files(0).is_empty());
        assert_eq!(b.level_files(1).len(), 1);
        assert_eq!(b.store().file_names().collect::<Vec<_>>(), ["L1-5.sst"]);
        assert_eq!(seqs(&b.probe(&JoinKey::int(0), 0).unwrap()), [2, 4]);
    }

    #[test]
    fn compaction_orders_by_seq_not_file() {
        // L0 files {k1:[t3]} (newer) and {k1:[t1,t2]} (older) must merge to k1:[t1,t2,t3].
        let mut b = LsmBackend::new(BackendConfig { l0_file_trigger: 10, ..cfg(2) }, MemStore::new()).unwrap();
        let k = JoinKey::int(1);
        b.insert(k.clone(), t(1)).unwrap();
        b.insert(k.clone(), t(2)).unwrap();
        b.flush().unwrap();
        b.insert(k.clone(), t(3)).unwrap();
        b.freeze_active();
        b.flush().unwrap();
        assert_eq!(b.level_files(0).len(), 2);
        b.compact(0).unwrap();
        let f = &b.level_files(1)[0];
        let block = f.read_block(b.store(), 0).unwrap();
        assert_eq!(seqs(block.get(&k).unwrap()), [1, 2, 3]);
    }

    #[test]
    fn compact_empty_levels_is_noop() {
        let mut b = LsmBackend::new(cfg(4), MemStore::new()).unwrap();
        b.compact(0).unwrap();
        b.compact(3).unwrap();
        assert_eq!(b.counters().compaction_count, 0);
        assert!(matches!(b.compact(6), Err(LsmError::InvalidLevel { level: 6, max_levels: 7 })));
    }

    #[test]
    fn ttl_drops_at_compaction_and_filters_probes() {
        let mut b = LsmBackend::new(BackendConfig { ttl_ms: Some(100), l0_file_trigger: 10, ..cfg(1) }, MemStore::new()).unwrap();
        let k = JoinKey::int(7);
        b.insert(k.clone(), StoredTuple::new(1, 10, &b"old"[..])).unwrap();
        b.insert(k.clone(), StoredTuple::new(2, 150, &b"new"[..])).unwrap();
        b.flush_all().unwrap();
        // Probe-side filter: at t=200 the tuple from t=10 is past its retention.
        assert_eq!(seqs(&b.probe(&k, 200).unwrap()), [2]);
        assert_eq!(seqs(&b.probe(&k, 100).unwrap()), [1, 2]);
        b.advance_clock(200);
        b.compact(0).unwrap();
        assert_eq!(b.level_files(1)[0].tuple_count, 1);
        assert_eq!(seqs(&b.probe(&k, 0).unwrap()), [2]);
    }

    #[test]
    fn failed_flush_keeps_frozen_table() {
        let mut b = LsmBackend::new(cfg(1), MemStore::new()).unwrap();
        b.insert(JoinKey::int(1), t(1)).unwrap();
        b.store_mut().fail_next_writes(1);
        assert!(matches!(b.flush(), Err(LsmError::Storage { source: StoreError::Io(_), .. })));
        assert_eq!((b.frozen_count(), b.counters().flush_count), (1, 0));
        assert_eq!(b.probe(&JoinKey::int(1), 0).unwrap(), [t(1)]);
        b.flush().unwrap();
        assert_eq!((b.frozen_count(), b.counters().flush_count), (0, 1));
    }

    #[test]
    fn failed_compaction_leaves_old_files_authoritative() {
        let mut b = LsmBackend::new(BackendConfig { l0_file_trigger: 10, ..cfg(1) }, MemStore::new()).unwrap();
        for s in 1..=3 {
            b.insert(JoinKey::int(1), t(s)).unwrap();
        }
        b.flush_all().unwrap();
        b.store_mut().fail_next_writes(1);
        assert!(b.compact(0).is_err());
        assert_eq!(b.level_files(0).len(), 3);
        assert_eq!(b.counters().compaction_count, 0);
        assert_eq!(seqs(&b.probe(&JoinKey::int(1), 0).unwrap()), [1, 2, 3]);
    }

    #[test]
    fn read_failure_surfaces_as_storage_error() {
        let mut b = LsmBackend::new(cfg(1), MemStore::new()).unwrap();
        b.insert(JoinKey::int(1), t(1)).unwrap();
        b.flush_all().unwrap();
        b.store_mut().fail_reads(true);
        assert!(matches!(b.probe(&JoinKey::int(1), 0), Err(LsmError::Storage { .. })));
    }

    #[test]
    fn warm_cache_hits_on_second_probe() {
        let mut b = LsmBackend::new(cfg(4), MemStore::new()).unwrap();
        for s in 1..=8 {
            b.insert(JoinKey::int(s as i64 % 3), t(s)).unwrap();
        }
        b.flush_all().unwrap();
        let cold = b.probe(&JoinKey::int(1), 0).unwrap();
        let after_cold = b.counters();
        let warm = b.probe(&JoinKey::int(1), 0).unwrap();
        let after_warm = b.counters();
        assert_eq!(cold, warm);
        assert!(after_warm.cache_hits > after_cold.cache_hits);
        assert_eq!(after_warm.blocks_read_from_disk, after_cold.blocks_read_from_disk);
    }

    #[test]
    fn cascades_when_level_exceeds_budget() {
        let config = BackendConfig { l0_file_trigger: 2, level_fanout: 2, ..cfg(1) };
        // level 1 budget = 1 * 2 * 2 = 4 tuples.
        assert_eq!(config.level_target_entries(1), 4);
        let mut b = LsmBackend::new(config, MemStore::new()).unwrap();
        let mut shadow: BTreeMap<i64, Vec<u64>> = BTreeMap::new();
        for s in 1..=6u64 {
            let k = (s % 2) as i64;
            b.insert(JoinKey::int(k), t(s)).unwrap();
            shadow.entry(k).or_default().push(s);
            b.flush_all().unwrap();
        }
        assert!(b.level_entries(2) > 0, "level 1 overflow must push data to level 2");
        for (k, v) in &shadow {
            assert_eq!(&seqs(&b.probe(&JoinKey::int(*k), 0).unwrap()), v);
        }
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            LsmBackend::new(BackendConfig { level_fanout: 1, ..cfg(1) }, MemStore::new()),
            Err(LsmError::InvalidConfig("level_fanout"))
        ));
        assert!(matches!(
            LsmBackend::new(BackendConfig { memtable_capacity_entries: 0, ..cfg(1) }, MemStore::new()),
            Err(LsmError::InvalidConfig("memtable_capacity_entries"))
        ));
    }
}
