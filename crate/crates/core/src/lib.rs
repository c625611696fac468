//! Differential evaluation of smartphone backups.
//!
//! A run compares three snapshots of name-value pairs: `Pre` (reference
//! data before the backup), `Backup`, and `Post` (reference data after).
//! Names are classified into overlapping/new/missing sets, changed values
//! into mismatch classes, and runs are grouped into report tables.

pub mod classify;
pub mod contentx;
pub mod ingest;
pub mod model;
pub mod pathmap;
pub mod replay;
pub mod report;
pub mod simdiff;
pub mod sqlite;

pub use model::{
    validate_snapshot, Digest, Entry, EntryKind, MismatchRecord, ModelError, NameSets, PClass, Platform,
    RunClassification, Snapshot, SnapshotLabel, ValueRef, Violation,
};
