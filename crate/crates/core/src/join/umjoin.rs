use alloc::vec;
use alloc::vec::Vec;

use super::{check_streams, probe_and_emit, InputEvent, JoinError, JoinedRow, StateBackend, StreamDef};
use crate::lsm::{BackendCounters, StoredTuple};
use crate::value::encode_row;

/// Multi-way equi-join over one state backend per stream.
///
/// An event's tuple is stored in its own stream's backend before any probe,
/// then the other backends are probed in ascending stream order. Probing
/// stops at the first empty result.
pub struct UmJoin<B> {
    streams: Vec<StreamDef>,
    backends: Vec<B>,
    next_seq: u64,
    short_circuit: bool,
    probe_counts: Vec<u64>,
    rejected: u64,
    emitted: u64,
}

impl<B: StateBackend> UmJoin<B> {
    pub fn new(streams: Vec<StreamDef>, backends: Vec<B>) -> Result<Self, JoinError> {
        check_streams(&streams, backends.len())?;
        let n = streams.len();
        Ok(UmJoin { streams, backends, next_seq: 1, short_circuit: true, probe_counts: vec![0; n], rejected: 0, emitted: 0 })
    }

    /// Disabling the short circuit probes every stream even after an empty
    /// result; the output is the same.
    pub fn set_short_circuit(&mut self, enabled: bool) {
        self.short_circuit = enabled;
    }

    pub fn streams(&self) -> &[StreamDef] {
        &self.streams
    }

    pub fn backend(&self, stream: usize) -> &B {
        &self.backends[stream]
    }

    pub fn backends(&self) -> &[B] {
        &self.backends
    }

    pub fn into_backends(self) -> Vec<B> {
        self.backends
    }

    /// Probes issued against each stream's state.
    pub fn probe_counts(&self) -> &[u64] {
        &self.probe_counts
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Always 0: no intermediate join results are materialized.
    pub fn intermediate_rows(&self) -> u64 {
        0
    }

    pub fn counters(&self) -> Vec<BackendCounters> {
        self.backends.iter().map(StateBackend::counters).collect()
    }

    pub fn process(&mut self, event: &InputEvent, now_ms: u64) -> Result<Vec<JoinedRow>, JoinError> {
        let mut rows = Vec::new();
        self.process_with(event, now_ms, &mut |r| rows.push(JoinedRow::from_refs(r)))?;
        Ok(rows)
    }

    /// Like [`process`](Self::process) but hands each output row to `emit`
    /// instead of collecting; returns the number of rows.
    pub fn process_with(&mut self, event: &InputEvent, now_ms: u64, emit: &mut dyn FnMut(&[&StoredTuple])) -> Result<u64, JoinError> {
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
        self.backends[own].insert(key.clone(), tuple.clone()).map_err(|source| JoinError::Backend { stream: own, source })?;
        let n = probe_and_emit(&mut self.backends, own, &key, &tuple, now_ms, self.short_circuit, &mut self.probe_counts, emit)?;
        self.emitted += n;
        Ok(n)
    }

    /// Flushes pending state in every backend.
    pub fn maintain(&mut self) -> Result<(), JoinError> {
        for (stream, b) in self.backends.iter_mut().enumerate() {
            b.maintain().map_err(|source| JoinError::Backend { stream, source })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::join::MemState;
    use crate::lsm::{BackendConfig, LsmBackend, MemStore};
    use crate::value::{decode_row, Value};
    use alloc::string::String;

    fn defs(n: usize) -> Vec<StreamDef> {
        (0..n).map(|i| StreamDef::new(i, alloc::format!("s{i}"), vec![String::from("id"), String::from("k")], &["k"]).unwrap()).collect()
    }

    fn ev(stream: usize, id: i64, k: i64) -> InputEvent {
        InputEvent { stream, row: vec![Value::Int(id), Value::Int(k)], ts: 0 }
    }

    fn ids(rows: &[JoinedRow]) -> Vec<Vec<i64>> {
        rows.iter().map(|r| r.0.iter().map(|t| decode_row(&t.payload).unwrap()[0].as_int().unwrap()).collect()).collect()
    }

    fn mem_join(n: usize) -> UmJoin<MemState> {
        UmJoin::new(defs(n), vec![MemState::new(); n]).unwrap()
    }

    #[test]
    fn first_event_emits_nothing() {
        let mut j = mem_join(3);
        assert!(j.process(&ev(0, 1, 1), 0).unwrap().is_empty());
    }

    #[test]
    fn three_way_cross_product() {
        let mut j = mem_join(3);
        j.process(&ev(0, 1, 1), 0).unwrap();
        j.process(&ev(1, 2, 1), 0).unwrap();
        j.process(&ev(1, 3, 1), 0).unwrap();
        let out = j.process(&ev(2, 4, 1), 0).unwrap();
        assert_eq!(ids(&out), [[1, 2, 4], [1, 3, 4]]);
        let prov: Vec<_> = out[0].provenance().collect();
        assert_eq!(prov, [(0, 1), (1, 2), (2, 4)]);
    }

    #[test]
    fn short_circuit_stops_after_first_empty_probe() {
        let mut j = mem_join(3);
        j.process(&ev(0, 1, 1), 0).unwrap();
        let before = j.probe_counts().to_vec();
        assert!(j.process(&ev(2, 2, 1), 0).unwrap().is_empty());
        let after = j.probe_counts();
        // A probed (non-empty), B probed (empty), nothing after B.
        assert_eq!((after[0] - before[0], after[1] - before[1], after[2] - before[2]), (1, 1, 0));

        let mut j = mem_join(3);
        j.process(&ev(1, 1, 1), 0).unwrap();
        let before = j.probe_counts().to_vec();
        j.process(&ev(2, 2, 1), 0).unwrap();
        // A empty first: B is never probed.
        assert_eq!((j.probe_counts()[0] - before[0], j.probe_counts()[1] - before[1]), (1, 0));
    }

    #[test]
    fn tuple_never_joins_itself() {
        let mut j = mem_join(2);
        assert!(j.process(&ev(0, 1, 5), 0).unwrap().is_empty());
        assert!(j.process(&ev(0, 2, 5), 0).unwrap().is_empty());
        assert_eq!(ids(&j.process(&ev(1, 3, 5), 0).unwrap()), [[1, 3], [2, 3]]);
    }

    #[test]
    fn malformed_event_is_rejected_and_counted() {
        let mut j = mem_join(2);
        let bad = InputEvent { stream: 0, row: vec![Value::Int(1)], ts: 0 };
        assert!(j.process(&bad, 0).unwrap_err().is_rejected_event());
        assert_eq!(j.rejected(), 1);
        assert!(matches!(j.process(&ev(5, 1, 1), 0), Err(JoinError::UnknownStream { stream: 5, streams: 2 })));
    }

    #[test]
    fn lsm_and_memory_state_agree_with_short_circuit_off() {
        let config = BackendConfig { memtable_capacity_entries: 3, l0_file_trigger: 2, block_bytes: 64, ..Default::default() };
        let lsm: Vec<_> = (0..3).map(|_| LsmBackend::new(config.clone(), MemStore::new()).unwrap()).collect();
        let mut a = UmJoin::new(defs(3), lsm).unwrap();
        let mut b = mem_join(3);
        b.set_short_circuit(false);
        for i in 0..60i64 {
            let e = ev((i * 7 % 3) as usize, i, i % 4);
            let mut x = ids(&a.process(&e, 0).unwrap());
            let mut y = ids(&b.process(&e, 0).unwrap());
            x.sort();
            y.sort();
            assert_eq!(x, y, "event {i}");
            a.maintain().unwrap();
        }
        assert!(a.counters().iter().all(|c| c.flush_count > 0));
    }

    #[test]
    fn rejects_bad_operator_shapes() {
        assert!(matches!(UmJoin::new(defs(1), vec![MemState::new()]), Err(JoinError::Config(_))));
        assert!(matches!(UmJoin::new(defs(2), vec![MemState::new()]), Err(JoinError::Config(_))));
        let mut d = defs(2);
        d[1].key_fields = vec![0, 1];
        assert!(matches!(UmJoin::new(d, vec![MemState::new(); 2]), Err(JoinError::Config(_))));
    }
}
