use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::multiset::{encode_components, ResultMultiset};
use crate::key::JoinKey;

/// A stream tuple as the oracle sees it: its join key and encoded row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTuple {
    pub key: JoinKey,
    pub payload: Vec<u8>,
}

/// Calls `f` with one tuple index per stream for every combination whose
/// keys are all equal. For each distinct key, every stream is filtered by a
/// linear scan and the filtered lists are crossed by nested loops.
pub fn for_each_batch_row(contents: &[&[OracleTuple]], f: &mut dyn FnMut(&[usize])) {
    let Some(first) = contents.first() else { return };
    let keys: BTreeSet<&JoinKey> = first.iter().map(|t| &t.key).collect();
    let mut idx = vec![0usize; contents.len()];
    for key in keys {
        let lists: Vec<Vec<usize>> =
            contents.iter().map(|s| s.iter().enumerate().filter(|(_, t)| &t.key == key).map(|(i, _)| i).collect()).collect();
        if lists.iter().any(Vec::is_empty) {
            continue;
        }
        nested(&lists, 0, &mut idx, f);
    }
}

fn nested(lists: &[Vec<usize>], depth: usize, idx: &mut [usize], f: &mut dyn FnMut(&[usize])) {
    if depth == lists.len() {
        f(idx);
        return;
    }
    for &i in &lists[depth] {
        idx[depth] = i;
        nested(lists, depth + 1, idx, f);
    }
}

/// Independent second implementation: walks every combination of tuples,
/// extending a prefix only while each new tuple's key equals the first
/// stream's. Quadratic in stream sizes; meant for small cross-checks.
pub fn for_each_batch_row_exhaustive(contents: &[&[OracleTuple]], f: &mut dyn FnMut(&[usize])) {
    fn walk(contents: &[&[OracleTuple]], chosen: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        let d = chosen.len();
        if d == contents.len() {
            f(chosen);
            return;
        }
        for (i, t) in contents[d].iter().enumerate() {
            if d > 0 && t.key != contents[0][chosen[0]].key {
                continue;
            }
            chosen.push(i);
            walk(contents, chosen, f);
            chosen.pop();
        }
    }
    if contents.is_empty() {
        return;
    }
    walk(contents, &mut Vec::with_capacity(contents.len()), f);
}

type Visitor = fn(&[&[OracleTuple]], &mut dyn FnMut(&[usize]));

fn collect(contents: &[&[OracleTuple]], visit: Visitor) -> ResultMultiset {
    let mut out = ResultMultiset::new();
    let mut parts: Vec<&[u8]> = Vec::with_capacity(contents.len());
    visit(contents, &mut |ids| {
        parts.clear();
        parts.extend(ids.iter().zip(contents).map(|(&i, s)| s[i].payload.as_slice()));
        out.insert(encode_components(&parts));
    });
    out
}

/// Full equi-join of the stream contents.
pub fn batch_multi_join(contents: &[&[OracleTuple]]) -> ResultMultiset {
    collect(contents, for_each_batch_row)
}

pub fn batch_multi_join_exhaustive(contents: &[&[OracleTuple]]) -> ResultMultiset {
    collect(contents, for_each_batch_row_exhaustive)
}

/// Rows produced when `increment` arrives on `stream` while the other
/// streams hold `snapshots`: the batch join with stream `stream` replaced by
/// the increment. Indices for `stream` refer to `increment`.
pub fn for_each_increment_row(snapshots: &[&[OracleTuple]], stream: usize, increment: &[OracleTuple], f: &mut dyn FnMut(&[usize])) {
    let mut view: Vec<&[OracleTuple]> = snapshots.to_vec();
    view[stream] = increment;
    for_each_batch_row(&view, f);
}

pub fn expected_increment(snapshots: &[&[OracleTuple]], stream: usize, increment: &[OracleTuple]) -> ResultMultiset {
    let mut view: Vec<&[OracleTuple]> = snapshots.to_vec();
    view[stream] = increment;
    batch_multi_join(&view)
}
