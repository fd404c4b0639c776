use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::sst::Block;

/// Cache key: `(file_seq, block offset)`.
pub type BlockId = (u64, u64);

struct Slot {
    block: Arc<Block>,
    charge: usize,
    tick: u64,
}

/// Byte-budgeted LRU cache of decoded data blocks.
///
/// A block is charged its on-disk size. Blocks larger than the whole
/// budget are never admitted, so a zero-capacity cache stays empty.
pub struct BlockCache {
    capacity: usize,
    used: usize,
    tick: u64,
    slots: BTreeMap<BlockId, Slot>,
    recency: BTreeMap<u64, BlockId>,
}

impl BlockCache {
    pub fn new(capacity_bytes: usize) -> Self {
        BlockCache { capacity: capacity_bytes, used: 0, tick: 0, slots: BTreeMap::new(), recency: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn used_bytes(&self) -> usize {
        self.used
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn contains(&self, id: &BlockId) -> bool {
        self.slots.contains_key(id)
    }

    fn next_tick(&mut self) -> u64 {
        self.tick += 1;
        self.tick
    }

    /// Looks a block up and marks it most recently used.
    pub fn get(&mut self, id: &BlockId) -> Option<Arc<Block>> {
        let tick = self.next_tick();
        let slot = self.slots.get_mut(id)?;
        self.recency.remove(&slot.tick);
        slot.tick = tick;
        self.recency.insert(tick, *id);
        Some(slot.block.clone())
    }

    pub fn insert(&mut self, id: BlockId, block: Arc<Block>) {
        let charge = block.encoded_len;
        if charge > self.capacity {
            return;
        }
        self.remove(&id);
        while self.used + charge > self.capacity {
            let Some((_, victim)) = self.recency.pop_first() else { break };
            if let Some(slot) = self.slots.remove(&victim) {
                self.used -= slot.charge;
            }
        }
        let tick = self.next_tick();
        self.recency.insert(tick, id);
        self.slots.insert(id, Slot { block, charge, tick });
        self.used += charge;
    }

    pub fn remove(&mut self, id: &BlockId) {
        if let Some(slot) = self.slots.remove(id) {
            self.recency.remove(&slot.tick);
            self.used -= slot.charge;
        }
    }

    /// Drops every block of a deleted file.
    pub fn evict_file(&mut self, file_seq: u64) {
        let ids: Vec<BlockId> = self.slots.range((file_seq, 0)..=(file_seq, u64::MAX)).map(|(id, _)| *id).collect();
        for id in ids {
            self.remove(&id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn block(len: usize) -> Arc<Block> {
        Arc::new(Block { entries: vec![], encoded_len: len })
    }

    #[test]
    fn evicts_least_recently_used_first() {
        let mut c = BlockCache::new(30);
        c.insert((1, 0), block(10));
        c.insert((1, 10), block(10));
        c.insert((2, 0), block(10));
        assert!(c.get(&(1, 0)).is_some());
        c.insert((3, 0), block(10));
        assert!(!c.contains(&(1, 10)), "oldest untouched block goes first");
        assert!(c.contains(&(1, 0)) && c.contains(&(2, 0)) && c.contains(&(3, 0)));
        assert_eq!(c.used_bytes(), 30);
        c.insert((4, 0), block(25));
        assert!(c.used_bytes() <= 30);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn oversized_and_zero_capacity() {
        let mut c = BlockCache::new(0);
        c.insert((1, 0), block(1));
        assert!(c.is_empty());
        let mut c = BlockCache::new(10);
        c.insert((1, 0), block(11));
        assert!(c.is_empty());
    }

    #[test]
    fn evict_file_drops_only_that_file() {
        let mut c = BlockCache::new(100);
        c.insert((1, 0), block(5));
        c.insert((1, 5), block(5));
        c.insert((2, 0), block(5));
        c.evict_file(1);
        assert_eq!(c.len(), 1);
        assert_eq!(c.used_bytes(), 5);
        assert!(c.contains(&(2, 0)));
    }
}
