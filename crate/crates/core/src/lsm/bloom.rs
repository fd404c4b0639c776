use alloc::vec;
use alloc::vec::Vec;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn probe_bits(hash: u64, bit_len: u32, hash_count: u32) -> impl Iterator<Item = u32> {
    let h1 = (hash ^ (hash >> 32)) & 0xFFFF_FFFF;
    let h2 = (hash >> 32) | 1;
    let m = bit_len as u64;
    (0..hash_count as u64).map(move |i| (h1.wrapping_add(i.wrapping_mul(h2)) % m) as u32)
}

/// Bloom filter probed with double hashing over one 64-bit FNV-1a hash:
/// `h1` is the xor of its two halves, `h2` its high half (forced odd), and
/// probe `i` tests bit `(h1 + i * h2) mod bit_len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    bit_len: u32,
    hash_count: u32,
}

impl BloomFilter {
    /// Builds a filter sized at `bits_per_key` bits per key (minimum 64 bits).
    pub fn from_key_hashes(hashes: &[u64], bits_per_key: u32, hash_count: u32) -> Self {
        let bit_len = (hashes.len() as u64 * bits_per_key as u64).clamp(64, u32::MAX as u64) as u32;
        let mut filter = BloomFilter { bits: vec![0; bit_len.div_ceil(8) as usize], bit_len, hash_count };
        for &h in hashes {
            for bit in probe_bits(h, bit_len, hash_count) {
                filter.bits[(bit / 8) as usize] |= 1 << (bit % 8);
            }
        }
        filter
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        self.may_contain_hash(fnv1a64(key))
    }

    pub fn may_contain_hash(&self, hash: u64) -> bool {
        probe_bits(hash, self.bit_len, self.hash_count).all(|bit| self.bits[(bit / 8) as usize] & (1 << (bit % 8)) != 0)
    }

    pub fn bit_len(&self) -> u32 {
        self.bit_len
    }

    pub fn hash_count(&self) -> u32 {
        self.hash_count
    }

    /// `bit_len:u32, bits, hash_count:u32`
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.bit_len.to_le_bytes());
        out.extend_from_slice(&self.bits);
        out.extend_from_slice(&self.hash_count.to_le_bytes());
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        let bit_len = u32::from_le_bytes(bytes.get(0..4)?.try_into().ok()?);
        let nbytes = bit_len.div_ceil(8) as usize;
        if bit_len == 0 || bytes.len() != 4 + nbytes + 4 {
            return None;
        }
        let bits = bytes[4..4 + nbytes].to_vec();
        let hash_count = u32::from_le_bytes(bytes[4 + nbytes..].try_into().ok()?);
        Some(BloomFilter { bits, bit_len, hash_count })
    }
}
