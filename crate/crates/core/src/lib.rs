//! Schema-driven web exploration engine that fills a relational table from a
//! base domain.
//!
//! Given an analytical query, a base URL, and a table schema (primary-key rows
//! and attribute columns), the engine fills each cell by an augment-then-prune
//! breadth-first traversal over webpages, reusing cached source pages and
//! navigation paths across structurally related cells. All judgment calls go
//! through a pluggable [`oracle::DecisionProvider`]; a deterministic heuristic
//! provider and an in-memory synthetic web ([`webworld`]) make every behavior
//! verifiable offline.

pub mod cache_manager;
pub mod eval;
pub mod explorer;
pub mod fetcher;
pub mod link_processor;
pub mod model;
pub mod oracle;
pub mod page_explorer;
pub mod runner;
pub mod webworld;

pub use model::{
    CellAddress, CellValue, ColumnSpec, ProvenanceRecord, TableInstance, TableSchema, TaskSpec,
};
