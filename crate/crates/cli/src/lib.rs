//! Turnkey experiment recipes over the `rydsim-core` simulator, plus the
//! result-table CSV schema and CLI argument helpers. The `rydsim` binary
//! is a thin wrapper over this library so every code path stays testable
//! in-process.

pub mod recipes;
pub mod scan;
pub mod table;
