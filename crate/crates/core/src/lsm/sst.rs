//! Sorted string table layout (all integers little-endian):
//!
//! ```text
//! [data block]* [index block] [bloom block] [footer]
//! data block : ( key_len:u32 key tuple_count:u32 ( seq:u64 ts:u64 payload_len:u32 payload )* )* crc32:u32
//! index block: count:u32 ( last_key_len:u32 last_key offset:u64 length:u32 )*
//! bloom block: bit_len:u32 bits hash_count:u32
//! footer     : index_offset:u64 index_len:u32 bloom_offset:u64 bloom_len:u32 level:u32 version:u32 magic:u64
//! ```
//!
//! A data block's CRC covers its record bytes; the index `length` includes
//! the trailing CRC. One key's record is never split across blocks, so a
//! block may overshoot the target size by its last record.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::bloom::{fnv1a64, BloomFilter};
use super::store::FileStore;
use super::{LsmError, StoredTuple};
use crate::key::JoinKey;

pub const SST_MAGIC: u64 = 0x554D_4A4F_494E_5353;
pub const SST_VERSION: u32 = 1;
pub const FOOTER_LEN: usize = 40;

pub fn sst_file_name(level: usize, file_seq: u64) -> String {
    format!("L{level}-{file_seq}.sst")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub last_key: JoinKey,
    pub offset: u64,
    pub len: u32,
}

/// A decoded data block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub entries: Vec<(JoinKey, Vec<StoredTuple>)>,
    /// On-disk size including the CRC; the block cache charges this.
    pub encoded_len: usize,
}

impl Block {
    pub fn get(&self, key: &JoinKey) -> Option<&[StoredTuple]> {
        self.entries.binary_search_by(|(k, _)| k.cmp(key)).ok().map(|i| self.entries[i].1.as_slice())
    }
}

fn corrupt(file: &str, reason: &'static str) -> LsmError {
    LsmError::Corruption { file: String::from(file), reason }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Decodes a data block (`bytes` includes the trailing CRC).
pub fn decode_block(bytes: &[u8], file: &str) -> Result<Block, LsmError> {
    if bytes.len() < 4 {
        return Err(corrupt(file, "data block shorter than its checksum"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
        return Err(corrupt(file, "data block checksum mismatch"));
    }
    let mut c = Cursor { bytes: body, pos: 0 };
    let mut entries: Vec<(JoinKey, Vec<StoredTuple>)> = Vec::new();
    let malformed = || corrupt(file, "malformed data block record");
    while !c.done() {
        let key_len = c.u32().ok_or_else(malformed)? as usize;
        let key = JoinKey::from_bytes(c.take(key_len).ok_or_else(malformed)?.to_vec());
        if entries.last().is_some_and(|(prev, _)| *prev >= key) {
            return Err(corrupt(file, "data block keys out of order"));
        }
        let count = c.u32().ok_or_else(malformed)? as usize;
        let mut tuples = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let seq = c.u64().ok_or_else(malformed)?;
            let ts = c.u64().ok_or_else(malformed)?;
            let len = c.u32().ok_or_else(malformed)? as usize;
            let payload: Arc<[u8]> = c.take(len).ok_or_else(malformed)?.into();
            tuples.push(StoredTuple { seq, ts, payload });
        }
        entries.push((key, tuples));
    }
    Ok(Block { entries, encoded_len: bytes.len() })
}

/// Accumulates key-sorted records into the SST byte layout.
#[derive(Debug)]
pub struct SstBuilder {
    block_bytes: usize,
    out: Vec<u8>,
    block: Vec<u8>,
    block_last: Option<JoinKey>,
    index: Vec<IndexEntry>,
    key_hashes: Vec<u64>,
    min_key: Option<JoinKey>,
    tuple_count: u64,
}

/// What a finished builder knows about the file it produced.
#[derive(Debug, Clone)]
pub struct BuiltSst {
    pub bytes: Vec<u8>,
    pub index: Vec<IndexEntry>,
    pub bloom: BloomFilter,
    pub min_key: JoinKey,
    pub max_key: JoinKey,
    pub tuple_count: u64,
    pub key_count: u64,
}

impl SstBuilder {
    pub fn new(block_bytes: usize) -> Self {
        SstBuilder {
            block_bytes: block_bytes.max(1),
            out: Vec::new(),
            block: Vec::new(),
            block_last: None,
            index: Vec::new(),
            key_hashes: Vec::new(),
            min_key: None,
            tuple_count: 0,
        }
    }

    /// Appends one key's tuple list. Keys must arrive strictly ascending.
    pub fn add(&mut self, key: &JoinKey, tuples: &[StoredTuple]) {
        let prev = self.block_last.as_ref().or(self.index.last().map(|e| &e.last_key));
        assert!(prev.is_none_or(|p| p < key), "sst keys must be strictly ascending");
        if self.min_key.is_none() {
            self.min_key = Some(key.clone());
        }
        self.block.extend_from_slice(&(key.len() as u32).to_le_bytes());
        self.block.extend_from_slice(key.as_bytes());
        self.block.extend_from_slice(&(tuples.len() as u32).to_le_bytes());
        for t in tuples {
            self.block.extend_from_slice(&t.seq.to_le_bytes());
            self.block.extend_from_slice(&t.ts.to_le_bytes());
            self.block.extend_from_slice(&(t.payload.len() as u32).to_le_bytes());
            self.block.extend_from_slice(&t.payload);
        }
        self.key_hashes.push(fnv1a64(key.as_bytes()));
        self.tuple_count += tuples.len() as u64;
        self.block_last = Some(key.clone());
        if self.block.len() >= self.block_bytes {
            self.finish_block();
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min_key.is_none()
    }

    /// Encoded bytes so far, including the open block.
    pub fn approx_len(&self) -> usize {
        self.out.len() + self.block.len()
    }

    fn finish_block(&mut self) {
        let Some(last_key) = self.block_last.take() else { return };
        let crc = crc32fast::hash(&self.block);
        let offset = self.out.len() as u64;
        self.out.append(&mut self.block);
        self.out.extend_from_slice(&crc.to_le_bytes());
        let len = (self.out.len() as u64 - offset) as u32;
        self.index.push(IndexEntry { last_key, offset, len });
    }

    /// Writes index, Bloom block and footer. Returns `None` for an empty builder.
    pub fn finish(mut self, level: usize, bloom_bits_per_key: u32, bloom_hashes: u32) -> Option<BuiltSst> {
        self.finish_block();
        let min_key = self.min_key.take()?;
        let max_key = self.index.last()?.last_key.clone();

        let index_offset = self.out.len() as u64;
        self.out.extend_from_slice(&(self.index.len() as u32).to_le_bytes());
        for e in &self.index {
            self.out.extend_from_slice(&(e.last_key.len() as u32).to_le_bytes());
            self.out.extend_from_slice(e.last_key.as_bytes());
            self.out.extend_from_slice(&e.offset.to_le_bytes());
            self.out.extend_from_slice(&e.len.to_le_bytes());
        }
        let index_len = (self.out.len() as u64 - index_offset) as u32;

        let bloom = BloomFilter::from_key_hashes(&self.key_hashes, bloom_bits_per_key, bloom_hashes);
        let bloom_offset = self.out.len() as u64;
        bloom.encode_into(&mut self.out);
        let bloom_len = (self.out.len() as u64 - bloom_offset) as u32;

        self.out.extend_from_slice(&index_offset.to_le_bytes());
        self.out.extend_from_slice(&index_len.to_le_bytes());
        self.out.extend_from_slice(&bloom_offset.to_le_bytes());
        self.out.extend_from_slice(&bloom_len.to_le_bytes());
        self.out.extend_from_slice(&(level as u32).to_le_bytes());
        self.out.extend_from_slice(&SST_VERSION.to_le_bytes());
        self.out.extend_from_slice(&SST_MAGIC.to_le_bytes());

        Some(BuiltSst {
            bytes: self.out,
            index: self.index,
            bloom,
            min_key,
            max_key,
            tuple_count: self.tuple_count,
            key_count: self.key_hashes.len() as u64,
        })
    }
}

/// Metadata of one immutable SST file; index and Bloom filter stay resident.
#[derive(Debug, Clone)]
pub struct SstFile {
    pub name: String,
    pub level: usize,
    pub file_seq: u64,
    pub min_key: JoinKey,
    pub max_key: JoinKey,
    pub index: Vec<IndexEntry>,
    pub bloom: BloomFilter,
    pub file_len: u64,
    pub tuple_count: u64,
    pub key_count: u64,
}

impl SstFile {
    pub(crate) fn from_built(built: &BuiltSst, name: String, level: usize, file_seq: u64) -> Self {
        SstFile {
            name,
            level,
            file_seq,
            min_key: built.min_key.clone(),
            max_key: built.max_key.clone(),
            index: built.index.clone(),
            bloom: built.bloom.clone(),
            file_len: built.bytes.len() as u64,
            tuple_count: built.tuple_count,
            key_count: built.key_count,
        }
    }

    /// Reads an existing file back: footer, index, Bloom block, and every
    /// data block (to recover key bounds and counts and to verify checksums).
    pub fn open<S: FileStore>(store: &S, name: &str, file_seq: u64) -> Result<SstFile, LsmError> {
        let io = |source| LsmError::Storage { file: String::from(name), source };
        let file_len = store.file_len(name).map_err(io)?;
        if file_len < FOOTER_LEN as u64 {
            return Err(corrupt(name, "file shorter than footer"));
        }
        let footer = store.read_at(name, file_len - FOOTER_LEN as u64, FOOTER_LEN).map_err(io)?;
        let mut c = Cursor { bytes: &footer, pos: 0 };
        let (index_offset, index_len) = (c.u64().unwrap(), c.u32().unwrap());
        let (bloom_offset, bloom_len) = (c.u64().unwrap(), c.u32().unwrap());
        let (level, version, magic) = (c.u32().unwrap(), c.u32().unwrap(), c.u64().unwrap());
        if magic != SST_MAGIC {
            return Err(corrupt(name, "bad magic number"));
        }
        if version != SST_VERSION {
            return Err(corrupt(name, "unsupported version"));
        }
        let body_end = file_len - FOOTER_LEN as u64;
        if index_offset + index_len as u64 > bloom_offset || bloom_offset + bloom_len as u64 > body_end {
            return Err(corrupt(name, "footer offsets out of range"));
        }

        let index_bytes = store.read_at(name, index_offset, index_len as usize).map_err(io)?;
        let mut c = Cursor { bytes: &index_bytes, pos: 0 };
        let bad_index = || corrupt(name, "malformed index block");
        let count = c.u32().ok_or_else(bad_index)?;
        let mut index = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let klen = c.u32().ok_or_else(bad_index)? as usize;
            let last_key = JoinKey::from_bytes(c.take(klen).ok_or_else(bad_index)?.to_vec());
            let offset = c.u64().ok_or_else(bad_index)?;
            let len = c.u32().ok_or_else(bad_index)?;
            index.push(IndexEntry { last_key, offset, len });
        }
        if !c.done() || index.is_empty() {
            return Err(bad_index());
        }

        let bloom_bytes = store.read_at(name, bloom_offset, bloom_len as usize).map_err(io)?;
        let bloom = BloomFilter::decode(&bloom_bytes).ok_or_else(|| corrupt(name, "malformed bloom block"))?;

        let mut file = SstFile {
            name: String::from(name),
            level: level as usize,
            file_seq,
            min_key: JoinKey::default(),
            max_key: index.last().unwrap().last_key.clone(),
            index,
            bloom,
            file_len,
            tuple_count: 0,
            key_count: 0,
        };
        for i in 0..file.index.len() {
            let block = file.read_block(store, i)?;
            if block.entries.last().map(|(k, _)| k) != Some(&file.index[i].last_key) {
                return Err(corrupt(name, "index last_key does not match block"));
            }
            if i == 0 {
                file.min_key = block.entries[0].0.clone();
            }
            file.key_count += block.entries.len() as u64;
            file.tuple_count += block.entries.iter().map(|(_, t)| t.len() as u64).sum::<u64>();
        }
        Ok(file)
    }

    /// Index position of the only block that can hold `key`, if any.
    pub fn block_for(&self, key: &JoinKey) -> Option<usize> {
        if *key < self.min_key || *key > self.max_key {
            return None;
        }
        let i = self.index.partition_point(|e| e.last_key < *key);
        (i < self.index.len()).then_some(i)
    }

    pub fn read_block<S: FileStore>(&self, store: &S, i: usize) -> Result<Block, LsmError> {
        let e = &self.index[i];
        let bytes =
            store.read_at(&self.name, e.offset, e.len as usize).map_err(|source| LsmError::Storage { file: self.name.clone(), source })?;
        decode_block(&bytes, &self.name)
    }
}
