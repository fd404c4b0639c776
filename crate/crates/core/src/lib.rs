//! Multi-way stream equi-join over per-stream LSM-tree state.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches a real
//! filesystem, a clock, or a file format other than the SST layout lives in
//! the `lsmjoin` companion crate; here the disk tier is reached through the
//! [`lsm::FileStore`] trait.
//!
//! Layout:
//! - [`value`] / [`key`]: field values, row payload codec, order-preserving join keys.
//! - [`lsm`]: the state backend (memtables, SST files, Bloom filters, block cache, leveled compaction).
//! - [`join`]: the multi-way operator, the binary-join-tree baseline and the capped in-memory variant.
//! - [`plan`]: logical plan DAG; [`tsc`]: the two-step multi-join conversion pass.
//! - [`oracle`]: nested-loop ground truth and a batch plan interpreter.
//! - [`sql`]: a tiny `SELECT * FROM .. WHERE a.x = b.y AND ..` front end.

#![no_std]

extern crate alloc;

pub mod join;
pub mod key;
pub mod lsm;
pub mod oracle;
pub mod plan;
pub mod sql;
pub mod tsc;
pub mod value;

pub use key::JoinKey;
pub use value::{Row, Value};
