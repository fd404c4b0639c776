//! Ground truth for the join operators and the plan rewriter.
//!
//! Everything here is deliberately naive: nested loops and linear scans, no
//! hashing, so that agreement with the engine means something.

mod batch;
mod interp;
mod multiset;

pub use batch::{
    batch_multi_join, batch_multi_join_exhaustive, expected_increment, for_each_batch_row, for_each_batch_row_exhaustive,
    for_each_increment_row, OracleTuple,
};
pub use interp::{canonical_line, interpret_plan, InterpretError, Relation, Table};
pub use multiset::{encode_components, pack_ids, IdRows, ResultMultiset};
