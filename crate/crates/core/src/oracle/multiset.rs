use alloc::collections::btree_map::{self, BTreeMap};
use alloc::vec::Vec;

/// Order-insensitive, multiplicity-sensitive collection of canonical rows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultMultiset {
    rows: BTreeMap<Vec<u8>, u64>,
    total: u64,
}

impl ResultMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, row: Vec<u8>) {
        self.insert_n(row, 1);
    }

    pub fn insert_n(&mut self, row: Vec<u8>, n: u64) {
        if n == 0 {
            return;
        }
        *self.rows.entry(row).or_default() += n;
        self.total += n;
    }

    /// Total row count, duplicates included.
    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> usize {
        self.rows.len()
    }

    pub fn count(&self, row: &[u8]) -> u64 {
        self.rows.get(row).copied().unwrap_or(0)
    }

    /// Distinct rows in byte order with their multiplicities.
    pub fn iter(&self) -> btree_map::Iter<'_, Vec<u8>, u64> {
        self.rows.iter()
    }

    pub fn union_with(&mut self, other: &ResultMultiset) {
        for (row, n) in &other.rows {
            self.insert_n(row.clone(), *n);
        }
    }

    /// `self − other`, or `None` when `other` is not contained in `self`.
    pub fn difference(&self, other: &ResultMultiset) -> Option<ResultMultiset> {
        let mut out = self.clone();
        for (row, n) in &other.rows {
            let have = out.rows.get_mut(row)?;
            *have = have.checked_sub(*n)?;
            if *have == 0 {
                out.rows.remove(row);
            }
            out.total -= n;
        }
        Some(out)
    }
}

/// Canonical joined-row encoding: `len:u32` little-endian then the bytes,
/// for each component in stream order.
pub fn encode_components(payloads: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payloads.iter().map(|p| 4 + p.len()).sum());
    for p in payloads {
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(p);
    }
    out
}

/// Packs up to four 32-bit tuple indices, stream 0 in the high bits.
pub fn pack_ids(ids: &[usize]) -> u128 {
    assert!(ids.len() <= 4, "at most four streams fit in a packed row");
    ids.iter().fold(0u128, |acc, &i| {
        assert!(i <= u32::MAX as usize, "tuple index exceeds 32 bits");
        (acc << 32) | i as u128
    })
}

/// Compact multiset of rows given as per-stream tuple indices; for runs too
/// large for [`ResultMultiset`]. Rows are compared after [`IdRows::seal`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdRows {
    rows: Vec<u128>,
    sealed: bool,
}

impl IdRows {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, ids: &[usize]) {
        self.rows.push(pack_ids(ids));
        self.sealed = false;
    }

    pub fn push_packed(&mut self, row: u128) {
        self.rows.push(row);
        self.sealed = false;
    }

    /// Sorts the rows; equality of sealed sets is multiset equality.
    pub fn seal(mut self) -> Self {
        self.rows.sort_unstable();
        self.sealed = true;
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn as_slice(&self) -> &[u128] {
        &self.rows
    }

    pub fn extend(&mut self, other: &IdRows) {
        self.rows.extend_from_slice(&other.rows);
        self.sealed = false;
    }

    /// `self − other` for sealed sets, or `None` when `other` is not contained in `self`.
    pub fn difference(&self, other: &IdRows) -> Option<IdRows> {
        assert!(self.sealed && other.sealed, "difference needs sealed row sets");
        let mut out = Vec::with_capacity(self.rows.len().saturating_sub(other.rows.len()));
        let mut j = 0;
        for &r in &self.rows {
            if j < other.rows.len() && other.rows[j] == r {
                j += 1;
            } else if j < other.rows.len() && other.rows[j] < r {
                return None;
            } else {
                out.push(r);
            }
        }
        (j == other.rows.len()).then_some(IdRows { rows: out, sealed: true })
    }
}
