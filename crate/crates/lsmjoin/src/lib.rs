//! File-backed state, data generation and plan execution on top of
//! `lsmjoin-core`.

pub mod data;
pub mod fs_store;
pub mod gen;
pub mod metrics;
pub mod pipeline;
pub mod schedule;
