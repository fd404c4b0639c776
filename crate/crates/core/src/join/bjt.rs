use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{InputEvent, JoinError, StateBackend, StreamDef};
use crate::key::JoinKey;
use crate::lsm::{BackendCounters, StoredTuple};
use crate::value::{decode_row, encode_row, DecodeError, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Field `field` of the component from stream `stream`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyRef {
    pub stream: usize,
    pub field: usize,
}

/// Shape of a binary join tree over stream indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinTree {
    Leaf(usize),
    Join { left: Box<JoinTree>, right: Box<JoinTree>, left_key: Vec<KeyRef>, right_key: Vec<KeyRef> },
}

impl JoinTree {
    /// `((s0 ⋈ s1) ⋈ s2) ⋈ ...` in the given order, every join on the
    /// streams' own key fields.
    pub fn left_deep(order: &[usize], streams: &[StreamDef]) -> Result<JoinTree, JoinError> {
        let key_of = |s: usize| -> Result<Vec<KeyRef>, JoinError> {
            let def = streams.get(s).ok_or(JoinError::UnknownStream { stream: s, streams: streams.len() })?;
            Ok(def.key_fields.iter().map(|&field| KeyRef { stream: s, field }).collect())
        };
        let (&first, rest) = order.split_first().ok_or_else(|| JoinError::Config(String::from("empty join order")))?;
        let mut tree = JoinTree::Leaf(first);
        for &s in rest {
            tree = JoinTree::Join {
                left: Box::new(tree),
                right: Box::new(JoinTree::Leaf(s)),
                left_key: key_of(first)?,
                right_key: key_of(s)?,
            };
        }
        Ok(tree)
    }

    /// Streams under this subtree, left to right.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            JoinTree::Leaf(s) => out.push(*s),
            JoinTree::Join { left, right, .. } => {
                left.collect_leaves(out);
                right.collect_leaves(out);
            }
        }
    }
}

/// A partial join result: one stored tuple per covered stream, sorted by stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partial(pub Vec<(usize, StoredTuple)>);

impl Partial {
    /// `count:u32, (stream:u32, seq:u64, ts:u64, len:u32, payload)*`, little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        for (stream, t) in &self.0 {
            out.extend_from_slice(&(*stream as u32).to_le_bytes());
            out.extend_from_slice(&t.seq.to_le_bytes());
            out.extend_from_slice(&t.ts.to_le_bytes());
            out.extend_from_slice(&(t.payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&t.payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Partial, DecodeError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], DecodeError> {
            let s = bytes.get(pos..pos + n).ok_or(DecodeError::Truncated(pos))?;
            pos += n;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes([s[0], s[1], s[2], s[3]]);
        let u64_at = |s: &[u8]| u64::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]);
        let count = u32_at(take(4)?) as usize;
        let mut parts = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let stream = u32_at(take(4)?) as usize;
            let seq = u64_at(take(8)?);
            let ts = u64_at(take(8)?);
            let len = u32_at(take(4)?) as usize;
            parts.push((stream, StoredTuple::new(seq, ts, take(len)?)));
        }
        if pos != bytes.len() {
            return Err(DecodeError::Trailing(pos));
        }
        Ok(Partial(parts))
    }

    fn merge(&self, other: &Partial) -> Partial {
        let mut parts = Vec::with_capacity(self.0.len() + other.0.len());
        parts.extend(self.0.iter().cloned());
        parts.extend(other.0.iter().cloned());
        parts.sort_unstable_by_key(|(s, _)| *s);
        Partial(parts)
    }

    fn key(&self, refs: &[KeyRef]) -> Result<JoinKey, JoinError> {
        let mut values: Vec<Value> = Vec::with_capacity(refs.len());
        for r in refs {
            let (_, t) = self
                .0
                .iter()
                .find(|(s, _)| *s == r.stream)
                .ok_or_else(|| JoinError::Config(alloc::format!("key references stream {} outside its side", r.stream)))?;
            let mut row = decode_row(&t.payload)?;
            if r.field >= row.len() {
                return Err(JoinError::Config(alloc::format!("key field {} out of range for stream {}", r.field, r.stream)));
            }
            values.push(row.swap_remove(r.field));
        }
        Ok(JoinKey::from_values(&values))
    }
}

/// One two-way symmetric join with a state backend per side.
pub struct BjtNode<B> {
    index: usize,
    left: B,
    right: B,
    left_key: Vec<KeyRef>,
    right_key: Vec<KeyRef>,
    next_seq: u64,
}

impl<B: StateBackend> BjtNode<B> {
    pub fn new(index: usize, left: B, right: B, left_key: Vec<KeyRef>, right_key: Vec<KeyRef>) -> Self {
        BjtNode { index, left, right, left_key, right_key, next_seq: 1 }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Stores `input` on `side`, probes the opposite side and appends every
    /// combined partial to `out`.
    pub fn process(&mut self, side: Side, input: &Partial, ts: u64, now_ms: u64, out: &mut Vec<Partial>) -> Result<(), JoinError> {
        let (own, other, refs) = match side {
            Side::Left => (&mut self.left, &mut self.right, &self.left_key),
            Side::Right => (&mut self.right, &mut self.left, &self.right_key),
        };
        let key = input.key(refs)?;
        let stored = StoredTuple::new(self.next_seq, ts, input.encode());
        self.next_seq += 1;
        let node = self.index;
        let err = |source| JoinError::Backend { stream: node, source };
        own.insert(key.clone(), stored).map_err(err)?;
        for m in other.probe(&key, now_ms).map_err(err)? {
            out.push(input.merge(&Partial::decode(&m.payload)?));
        }
        Ok(())
    }

    pub fn maintain(&mut self) -> Result<(), JoinError> {
        let node = self.index;
        self.left.maintain().map_err(|source| JoinError::Backend { stream: node, source })?;
        self.right.maintain().map_err(|source| JoinError::Backend { stream: node, source })
    }

    pub fn counters(&self) -> [BackendCounters; 2] {
        [self.left.counters(), self.right.counters()]
    }
}

/// Wiring of a flattened tree: nodes are numbered in post-order, so the
/// root is last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BjtTopology {
    /// Consumer of each node's output; `None` for the root.
    pub parents: Vec<Option<(usize, Side)>>,
    /// Node and side that receives each stream's events.
    pub leaf_slots: Vec<(usize, Side)>,
}

impl BjtTopology {
    pub fn root(&self) -> usize {
        self.parents.len() - 1
    }
}

/// Binary join tree baseline. Every non-root node emits intermediate rows
/// that its parent stores in its own backend.
pub struct BinaryJoinTree<B> {
    streams: Vec<StreamDef>,
    nodes: Vec<BjtNode<B>>,
    topology: BjtTopology,
    next_seq: u64,
    intermediate_rows: u64,
    rejected: u64,
    emitted: u64,
}

enum Slot {
    Stream(usize),
    Node(usize),
}

impl<B: StateBackend> BinaryJoinTree<B> {
    /// `make_backend(node, side)` supplies each node's state.
    pub fn new(streams: Vec<StreamDef>, tree: &JoinTree, make_backend: &mut dyn FnMut(usize, Side) -> B) -> Result<Self, JoinError> {
        super::check_streams(&streams, streams.len())?;
        let mut leaves = tree.leaves();
        leaves.sort_unstable();
        if leaves != (0..streams.len()).collect::<Vec<_>>() {
            return Err(JoinError::Config(String::from("join tree leaves must cover every stream exactly once")));
        }
        let mut nodes = Vec::new();
        let mut parents = Vec::new();
        let mut leaf_slots = vec![(0, Side::Left); streams.len()];
        build(tree, &mut nodes, &mut parents, &mut leaf_slots, make_backend)?;
        Ok(BinaryJoinTree {
            streams,
            nodes,
            topology: BjtTopology { parents, leaf_slots },
            next_seq: 1,
            intermediate_rows: 0,
            rejected: 0,
            emitted: 0,
        })
    }

    pub fn topology(&self) -> &BjtTopology {
        &self.topology
    }

    pub fn streams(&self) -> &[StreamDef] {
        &self.streams
    }

    pub fn into_parts(self) -> (Vec<StreamDef>, Vec<BjtNode<B>>, BjtTopology) {
        (self.streams, self.nodes, self.topology)
    }

    /// Rows emitted by non-root nodes, each of which is stored again upstream.
    pub fn intermediate_rows(&self) -> u64 {
        self.intermediate_rows
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Counters of every node backend, left then right, in node order.
    pub fn counters(&self) -> Vec<BackendCounters> {
        self.nodes.iter().flat_map(|n| n.counters()).collect()
    }

    pub fn process_with(&mut self, event: &InputEvent, now_ms: u64, emit: &mut dyn FnMut(&[&StoredTuple])) -> Result<u64, JoinError> {
        let Some(def) = self.streams.get(event.stream) else {
            return Err(JoinError::UnknownStream { stream: event.stream, streams: self.streams.len() });
        };
        if let Err(e) = def.key_of(&event.row) {
            self.rejected += 1;
            return Err(e);
        }
        let tuple = StoredTuple::new(self.next_seq, event.ts, encode_row(&event.row));
        self.next_seq += 1;
        let (node, side) = self.topology.leaf_slots[event.stream];
        let root = self.topology.root();
        let mut work = vec![(node, side, Partial(vec![(event.stream, tuple)]))];
        let mut out = Vec::new();
        let mut emitted = 0;
        while let Some((node, side, partial)) = work.pop() {
            self.nodes[node].process(side, &partial, event.ts, now_ms, &mut out)?;
            for p in out.drain(..) {
                if node == root {
                    let refs: Vec<&StoredTuple> = p.0.iter().map(|(_, t)| t).collect();
                    emit(&refs);
                    emitted += 1;
                } else {
                    self.intermediate_rows += 1;
                    let (parent, parent_side) = self.topology.parents[node].expect("non-root node has a parent");
                    work.push((parent, parent_side, p));
                }
            }
        }
        self.emitted += emitted;
        Ok(emitted)
    }

    pub fn maintain(&mut self) -> Result<(), JoinError> {
        self.nodes.iter_mut().try_for_each(BjtNode::maintain)
    }
}

fn build<B: StateBackend>(
    tree: &JoinTree,
    nodes: &mut Vec<BjtNode<B>>,
    parents: &mut Vec<Option<(usize, Side)>>,
    leaf_slots: &mut [(usize, Side)],
    make_backend: &mut dyn FnMut(usize, Side) -> B,
) -> Result<Slot, JoinError> {
    let JoinTree::Join { left, right, left_key, right_key } = tree else {
        let JoinTree::Leaf(s) = tree else { unreachable!() };
        return Ok(Slot::Stream(*s));
    };
    if left_key.is_empty() || left_key.len() != right_key.len() {
        return Err(JoinError::Config(String::from("join sides need keys of equal, non-zero arity")));
    }
    let (left_leaves, right_leaves) = (left.leaves(), right.leaves());
    if !left_key.iter().all(|k| left_leaves.contains(&k.stream)) || !right_key.iter().all(|k| right_leaves.contains(&k.stream)) {
        return Err(JoinError::Config(String::from("join key references a stream outside its side")));
    }
    let l = build(left, nodes, parents, leaf_slots, make_backend)?;
    let r = build(right, nodes, parents, leaf_slots, make_backend)?;
    let index = nodes.len();
    nodes.push(BjtNode::new(index, make_backend(index, Side::Left), make_backend(index, Side::Right), left_key.clone(), right_key.clone()));
    parents.push(None);
    for (slot, side) in [(l, Side::Left), (r, Side::Right)] {
        match slot {
            Slot::Stream(s) => leaf_slots[s] = (index, side),
            Slot::Node(child) => parents[child] = Some((index, side)),
        }
    }
    Ok(Slot::Node(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::join::{MemState, UmJoin};

    fn defs(n: usize) -> Vec<StreamDef> {
        (0..n).map(|i| StreamDef::new(i, alloc::format!("s{i}"), vec![String::from("id"), String::from("k")], &["k"]).unwrap()).collect()
    }

    fn ev(stream: usize, id: i64, k: i64) -> InputEvent {
        InputEvent { stream, row: vec![Value::Int(id), Value::Int(k)], ts: 0 }
    }

    fn collect(rows: &mut Vec<Vec<Vec<u8>>>) -> impl FnMut(&[&StoredTuple]) + '_ {
        move |r| rows.push(r.iter().map(|t| t.payload.to_vec()).collect())
    }

    #[test]
    fn two_way_single_match() {
        let tree = JoinTree::left_deep(&[0, 1], &defs(2)).unwrap();
        let mut j = BinaryJoinTree::new(defs(2), &tree, &mut |_, _| MemState::new()).unwrap();
        let mut rows = Vec::new();
        j.process_with(&ev(1, 10, 3), 0, &mut collect(&mut rows)).unwrap();
        j.process_with(&ev(0, 20, 3), 0, &mut collect(&mut rows)).unwrap();
        assert_eq!(rows, [vec![encode_row(&[Value::Int(20), Value::Int(3)]), encode_row(&[Value::Int(10), Value::Int(3)])]]);
        assert_eq!(j.intermediate_rows(), 0);
    }

    #[test]
    fn left_deep_tree_matches_multiway_operator() {
        let tree = JoinTree::left_deep(&[2, 0, 1], &defs(3)).unwrap();
        let mut bjt = BinaryJoinTree::new(defs(3), &tree, &mut |_, _| MemState::new()).unwrap();
        let mut um = UmJoin::new(defs(3), vec![MemState::new(); 3]).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let mut child_emissions = 0;
        for i in 0..90i64 {
            let e = ev((i * 5 % 3) as usize, i, i % 5);
            bjt.process_with(&e, 0, &mut collect(&mut a)).unwrap();
            um.process_with(&e, 0, &mut collect(&mut b)).unwrap();
            child_emissions = bjt.intermediate_rows();
        }
        a.sort();
        b.sort();
        assert!(!a.is_empty());
        assert_eq!(a, b);
        assert!(child_emissions > 0);
        assert_eq!(um.intermediate_rows(), 0);
    }

    #[test]
    fn topology_is_post_order() {
        let tree = JoinTree::left_deep(&[0, 1, 2], &defs(3)).unwrap();
        let j = BinaryJoinTree::new(defs(3), &tree, &mut |_, _| MemState::new()).unwrap();
        let t = j.topology();
        assert_eq!(t.parents, [Some((1, Side::Left)), None]);
        assert_eq!(t.leaf_slots, [(0, Side::Left), (0, Side::Right), (1, Side::Right)]);
    }

    #[test]
    fn partial_codec_round_trips_and_rejects_truncation() {
        let p = Partial(vec![(0, StoredTuple::new(3, 4, &b"ab"[..])), (2, StoredTuple::new(9, 1, &b""[..]))]);
        let bytes = p.encode();
        assert_eq!(Partial::decode(&bytes).unwrap(), p);
        assert!(Partial::decode(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_trees_not_covering_streams() {
        let tree = JoinTree::left_deep(&[0, 0], &defs(2)).unwrap();
        assert!(BinaryJoinTree::new(defs(2), &tree, &mut |_, _| MemState::new()).is_err());
    }
}
