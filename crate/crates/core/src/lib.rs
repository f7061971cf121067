//! Table-level logical backup and restore.
//!
//! Tables are streamed out of a database through a [`backend::Connector`]
//! into chunked dump files (`<table>.<chunk>.dump`). Each file is a sequence
//! of CRC-checked frames, so a damaged file loses only the records whose
//! frames were hit; [`format::read_salvage`] recovers the rest. Restores run
//! per record with failure isolation and optional file-level parallelism.

// Errors carry table and path context by value; they are cold and small in
// number.
#![allow(clippy::result_large_err)]

pub mod backend;
pub mod bench;
pub mod dump;
pub mod format;
pub mod load;
pub mod model;
pub mod plan;

pub use format::{
    read_salvage, read_strict, write_dump_file, DumpFileHeader, DumpWriter, FormatError, SalvageReport,
    StrictReader,
};
pub use model::{ChunkPolicy, CommitPolicy, DumpPlan, Row, TableSpec, Value};
pub use plan::{parse_plan, render_plan, MalformedPlan};
pub use dump::{dump_all, dump_table, DumpError, DumpOptions, DumpReport};
pub use load::{load_file, load_many, LoadError, LoadOptions, LoadReport, ReadMode};
