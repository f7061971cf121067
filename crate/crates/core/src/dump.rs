//! Streams planned tables out of a database into chunked dump files.

use std::fs::{self, File, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use crate::backend::{BackendError, Connector};
use crate::format::{DumpFileHeader, DumpWriter, FormatError};
use crate::model::{count_placeholders, ChunkPolicy, DumpPlan, TableSpec};

#[derive(Debug, Clone, Copy, Default)]
pub struct DumpOptions {
    pub chunk: ChunkPolicy,
    /// Replace an existing dump of the same table instead of refusing.
    pub overwrite: bool,
    /// Continue with the next table after a failure.
    pub keep_going: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpedFile {
    pub path: PathBuf,
    pub records: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpReport {
    pub table_name: String,
    pub total_rows: u64,
    pub files: Vec<DumpedFile>,
}

#[derive(Debug)]
pub enum DumpEvent<'a> {
    TableStarted { table: &'a str },
    FileWritten { path: &'a Path, records: u64 },
    TableFinished { report: &'a DumpReport },
}

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error("table {table}: select failed: {source}")]
    QueryFailed { table: String, source: BackendError },
    #[error("table {table}, row {row}, column {column} ({column_name}): type {type_name} cannot be dumped; cast this column to text in select_sql")]
    UnsupportedType {
        table: String,
        row: u64,
        column: usize,
        column_name: String,
        type_name: String,
    },
    #[error("table {table}: reading row {row} failed: {source}")]
    Backend {
        table: String,
        row: u64,
        source: BackendError,
    },
    #[error("table {table}: {} already exists (use overwrite to replace it)", path.display())]
    FileExists { table: String, path: PathBuf },
    #[error("table {table}: insert statement has {placeholders} placeholders but the select returns {columns} columns")]
    ArityMismatch {
        table: String,
        placeholders: usize,
        columns: usize,
    },
    #[error("table {table}: row {row} has {found} columns, earlier rows had {expected}")]
    RaggedRow {
        table: String,
        row: u64,
        expected: usize,
        found: usize,
    },
    #[error("table {table}: {} : {source}", path.display())]
    Write {
        table: String,
        path: PathBuf,
        source: FormatError,
    },
    #[error("table {table}: {source}")]
    Io { table: String, source: io::Error },
}

impl DumpError {
    pub fn table(&self) -> &str {
        match self {
            DumpError::QueryFailed { table, .. }
            | DumpError::UnsupportedType { table, .. }
            | DumpError::Backend { table, .. }
            | DumpError::FileExists { table, .. }
            | DumpError::ArityMismatch { table, .. }
            | DumpError::RaggedRow { table, .. }
            | DumpError::Write { table, .. }
            | DumpError::Io { table, .. } => table,
        }
    }
}

/// `<table>.<chunk>.dump`
pub fn dump_file_name(table: &str, chunk_index: u32) -> String {
    format!("{table}.{chunk_index}.dump")
}

/// Existing `<table>.<n>.dump` files in `dir`, ordered by chunk number.
pub fn existing_chunks(dir: &Path, table: &str) -> io::Result<Vec<(u64, PathBuf)>> {
    let prefix = format!("{table}.");
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(n) = name
            .strip_prefix(&prefix)
            .and_then(|rest| rest.strip_suffix(".dump"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if n >= 1 {
            found.push((n, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}

struct OpenChunk {
    writer: DumpWriter<File>,
    path: PathBuf,
}

/// Dumps one table. Files are `<table>.<i>.dump`, each holding
/// `records_per_file` records except possibly the last. An empty result set
/// writes no file.
///
/// On failure, completed chunk files are kept and the chunk being written is
/// removed.
pub fn dump_table(
    conn: &mut dyn Connector,
    spec: &TableSpec,
    opts: &DumpOptions,
    out_dir: &Path,
    progress: &dyn Fn(&DumpEvent<'_>),
) -> Result<DumpReport, DumpError> {
    let table = spec.table_name();
    let io_err = |source| DumpError::Io {
        table: table.to_owned(),
        source,
    };

    let stale = existing_chunks(out_dir, table).map_err(io_err)?;
    if let Some((_, path)) = stale.first() {
        if !opts.overwrite {
            return Err(DumpError::FileExists {
                table: table.to_owned(),
                path: path.clone(),
            });
        }
    }

    progress(&DumpEvent::TableStarted { table });
    let rows = conn.query(spec.select_sql()).map_err(|source| DumpError::QueryFailed {
        table: table.to_owned(),
        source,
    })?;

    if opts.overwrite {
        for (_, path) in &stale {
            fs::remove_file(path).map_err(io_err)?;
        }
    }

    let per_file = opts.chunk.records_per_file();
    let mut report = DumpReport {
        table_name: table.to_owned(),
        total_rows: 0,
        files: Vec::new(),
    };
    let mut columns: Option<usize> = None;
    let mut current: Option<OpenChunk> = None;

    let result = (|| -> Result<(), DumpError> {
        for item in rows {
            let ordinal = report.total_rows + 1;
            let row = item.map_err(|e| match e {
                BackendError::UnsupportedType {
                    column,
                    index,
                    type_name,
                } => DumpError::UnsupportedType {
                    table: table.to_owned(),
                    row: ordinal,
                    column: index,
                    column_name: column,
                    type_name,
                },
                source => DumpError::Backend {
                    table: table.to_owned(),
                    row: ordinal,
                    source,
                },
            })?;

            let width = *columns.get_or_insert_with(|| row.len());
            if row.len() != width {
                return Err(DumpError::RaggedRow {
                    table: table.to_owned(),
                    row: ordinal,
                    expected: width,
                    found: row.len(),
                });
            }

            if current.is_none() {
                let placeholders = count_placeholders(spec.insert_sql());
                let column_count = u16::try_from(width).ok().filter(|&w| w >= 1 && placeholders == width);
                let Some(column_count) = column_count else {
                    return Err(DumpError::ArityMismatch {
                        table: table.to_owned(),
                        placeholders,
                        columns: width,
                    });
                };
                let chunk_index = u32::try_from(report.files.len() + 1).expect("fewer than 2^32 chunks");
                let path = out_dir.join(dump_file_name(table, chunk_index));
                let file = open_target(&path, opts.overwrite).map_err(|e| {
                    if e.kind() == io::ErrorKind::AlreadyExists {
                        DumpError::FileExists {
                            table: table.to_owned(),
                            path: path.clone(),
                        }
                    } else {
                        io_err(e)
                    }
                })?;
                let header = DumpFileHeader::new(table, spec.insert_sql(), chunk_index, column_count);
                let writer = match DumpWriter::new(file, &header) {
                    Ok(w) => w,
                    Err(source) => {
                        let _ = fs::remove_file(&path);
                        return Err(DumpError::Write {
                            table: table.to_owned(),
                            path,
                            source,
                        });
                    }
                };
                current = Some(OpenChunk { writer, path });
            }

            let chunk = current.as_mut().expect("chunk opened above");
            chunk.writer.write_row(&row).map_err(|source| DumpError::Write {
                table: table.to_owned(),
                path: chunk.path.clone(),
                source,
            })?;
            report.total_rows += 1;

            if chunk.writer.records_written() == per_file {
                let done = current.take().expect("chunk is open");
                close_chunk(done, table, &mut report, progress)?;
            }
        }
        if let Some(done) = current.take() {
            close_chunk(done, table, &mut report, progress)?;
        }
        Ok(())
    })();

    if let Err(e) = result {
        if let Some(chunk) = current.take() {
            drop(chunk.writer);
            let _ = fs::remove_file(&chunk.path);
        }
        return Err(e);
    }

    progress(&DumpEvent::TableFinished { report: &report });
    Ok(report)
}

fn open_target(path: &Path, overwrite: bool) -> io::Result<File> {
    let mut o = OpenOptions::new();
    o.write(true);
    if overwrite {
        o.create(true).truncate(true);
    } else {
        o.create_new(true);
    }
    o.open(path)
}

fn close_chunk(
    chunk: OpenChunk,
    table: &str,
    report: &mut DumpReport,
    progress: &dyn Fn(&DumpEvent<'_>),
) -> Result<(), DumpError> {
    let OpenChunk { writer, path } = chunk;
    let (records, file) = match writer.finish() {
        Ok(r) => r,
        Err(source) => {
            let _ = fs::remove_file(&path);
            return Err(DumpError::Write {
                table: table.to_owned(),
                path,
                source,
            });
        }
    };
    if let Err(source) = file.sync_all() {
        let _ = fs::remove_file(&path);
        return Err(DumpError::Io {
            table: table.to_owned(),
            source,
        });
    }
    progress(&DumpEvent::FileWritten { path: &path, records });
    report.files.push(DumpedFile { path, records });
    Ok(())
}

/// Outcome of dumping a whole plan.
#[derive(Debug, Default)]
pub struct DumpRun {
    /// Reports for tables that dumped completely, in plan order.
    pub reports: Vec<DumpReport>,
    pub failures: Vec<DumpError>,
}

impl DumpRun {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Dumps every table in plan order. Stops at the first failure unless
/// `keep_going` is set.
pub fn dump_all(
    conn: &mut dyn Connector,
    plan: &DumpPlan,
    opts: &DumpOptions,
    out_dir: &Path,
    progress: &dyn Fn(&DumpEvent<'_>),
) -> DumpRun {
    let mut run = DumpRun::default();
    for spec in plan.tables() {
        match dump_table(conn, spec, opts, out_dir, progress) {
            Ok(r) => run.reports.push(r),
            Err(e) => {
                run.failures.push(e);
                if !opts.keep_going {
                    break;
                }
            }
        }
    }
    run
}
