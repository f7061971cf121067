//! C ABI for tabledump.
//!
//! Every function returns a [`TdStatus`]; on anything but `TD_STATUS_OK` a
//! description is available from [`td_last_error`] on the same thread.
//! Objects are opaque handles released with their `_free` function. Strings
//! passed in are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use tabledump::backend::{BackendError, Connector, MemoryDatabase};
use tabledump::format::{FormatError, SalvageReport};
use tabledump::{
    dump_all, load_many, parse_plan, read_salvage, read_strict, write_dump_file, ChunkPolicy, CommitPolicy,
    DumpError, DumpOptions, LoadError, LoadOptions, ReadMode, Row, Value,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    /// A dump file is damaged or not a dump file.
    Corrupt = 3,
    Backend = 4,
    MalformedPlan = 5,
    /// Dump files for the table already exist.
    FileExists = 6,
    /// A selected column has a type that cannot be dumped.
    UnsupportedType = 7,
    /// The operation finished but some records or tables failed.
    PartialFailure = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdValueKind {
    Null = 0,
    Int = 1,
    Float = 2,
    Text = 3,
    Bytes = 4,
}

/// One field of a record. For text and bytes, `data`/`len` point into the
/// owning [`TdDumpFile`]; text is UTF-8 and not NUL-terminated.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TdField {
    pub kind: TdValueKind,
    pub int_value: i64,
    pub float_value: f64,
    pub data: *const u8,
    pub len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdSalvageReport {
    pub records_recovered: u64,
    pub bytes_skipped: u64,
    pub header_found: bool,
    pub end_frame_found: bool,
    /// Meaningful only when `end_frame_found`.
    pub expected_records: u64,
    pub crc_rejections: u64,
}

impl From<&SalvageReport> for TdSalvageReport {
    fn from(r: &SalvageReport) -> Self {
        TdSalvageReport {
            records_recovered: r.records_recovered,
            bytes_skipped: r.bytes_skipped,
            header_found: r.header_found,
            end_frame_found: r.end_frame_found,
            expected_records: r.expected_records.unwrap_or(0),
            crc_rejections: r.crc_rejections,
        }
    }
}

/// Totals for a load call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdLoadSummary {
    pub files_loaded: u64,
    pub files_failed: u64,
    pub records_inserted: u64,
    pub records_failed: u64,
}

/// Totals for a dump call.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TdDumpSummary {
    pub tables_dumped: u64,
    pub tables_failed: u64,
    pub files_written: u64,
    pub records_dumped: u64,
}

/// A reference database, opened from or saved to a snapshot file.
pub struct TdDatabase {
    db: MemoryDatabase,
}

/// The decoded contents of one dump file.
pub struct TdDumpFile {
    table_name: CString,
    insert_sql: CString,
    chunk_index: u32,
    column_count: u16,
    rows: Vec<Row>,
    salvage: Option<SalvageReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

type Failure = (TdStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<TdStatus, Failure>) -> TdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == TdStatus::Ok {
                set_error("");
            }
            status
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TdStatus::Panic
        }
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    (TdStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is NULL")))
}

fn format_failure(e: FormatError) -> Failure {
    let status = match e {
        FormatError::Io(_) => TdStatus::Io,
        _ => TdStatus::Corrupt,
    };
    (status, e.to_string())
}

fn backend_failure(e: BackendError) -> Failure {
    (TdStatus::Backend, e.to_string())
}

fn dump_status(e: &DumpError) -> TdStatus {
    match e {
        DumpError::FileExists { .. } => TdStatus::FileExists,
        DumpError::UnsupportedType { .. } => TdStatus::UnsupportedType,
        DumpError::Io { .. } => TdStatus::Io,
        DumpError::Write { source, .. } => format_failure_status(source),
        DumpError::ArityMismatch { .. } => TdStatus::InvalidArgument,
        _ => TdStatus::Backend,
    }
}

fn format_failure_status(e: &FormatError) -> TdStatus {
    match e {
        FormatError::Io(_) => TdStatus::Io,
        _ => TdStatus::Corrupt,
    }
}

fn load_status(e: &LoadError) -> TdStatus {
    match e {
        LoadError::Open { .. } => TdStatus::Io,
        LoadError::Read { source, .. } => format_failure_status(source),
        LoadError::NoHeader { .. } => TdStatus::Corrupt,
        LoadError::ArityMismatch { .. } => TdStatus::InvalidArgument,
        LoadError::ConnectionLost { .. } | LoadError::Connect { .. } => TdStatus::Backend,
        LoadError::WorkerPanicked { .. } => TdStatus::Panic,
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn td_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn td_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens a database snapshot file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_db_open(path: *const c_char, out: *mut *mut TdDatabase) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let db = MemoryDatabase::open(str_arg(path, "path")?).map_err(backend_failure)?;
        *out = Box::into_raw(Box::new(TdDatabase { db }));
        Ok(TdStatus::Ok)
    })
}

/// Creates a database by running an SQL script (CREATE TABLE, INSERT, ...).
///
/// # Safety
/// `script` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_db_from_script(script: *const c_char, out: *mut *mut TdDatabase) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let db = MemoryDatabase::from_script(str_arg(script, "script")?).map_err(backend_failure)?;
        *out = Box::into_raw(Box::new(TdDatabase { db }));
        Ok(TdStatus::Ok)
    })
}

/// Writes the database to a snapshot file.
///
/// # Safety
/// `db` must come from this library; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn td_db_save(db: *const TdDatabase, path: *const c_char) -> TdStatus {
    guard(|| {
        let db = db.as_ref().ok_or_else(|| invalid("db is NULL"))?;
        let path = str_arg(path, "path")?;
        db.db.save(path).map_err(|e| (TdStatus::Io, format!("{path}: {e}")))?;
        Ok(TdStatus::Ok)
    })
}

/// Number of committed rows in `table`.
///
/// # Safety
/// `db` must come from this library; `table` must be a valid C string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_db_row_count(db: *const TdDatabase, table: *const c_char, out: *mut u64) -> TdStatus {
    guard(|| {
        let db = db.as_ref().ok_or_else(|| invalid("db is NULL"))?;
        let out = out_arg(out, "out")?;
        *out = db.db.row_count(str_arg(table, "table")?).map_err(backend_failure)? as u64;
        Ok(TdStatus::Ok)
    })
}

/// Releases a database handle. NULL is ignored.
///
/// # Safety
/// `db` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_db_free(db: *mut TdDatabase) {
    if !db.is_null() {
        drop(Box::from_raw(db));
    }
}

/// Dumps the tables of a plan (text in the plan file format) into
/// `out_dir`, `chunk_size` records per file (0 means the default). Returns
/// `TD_STATUS_PARTIAL_FAILURE` when `keep_going` is set and some table
/// failed; the message names the first failure. `summary` may be NULL.
///
/// # Safety
/// `db` must come from this library; strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn td_dump(
    db: *const TdDatabase,
    plan: *const c_char,
    out_dir: *const c_char,
    chunk_size: u64,
    overwrite: bool,
    keep_going: bool,
    summary: *mut TdDumpSummary,
) -> TdStatus {
    guard(|| {
        let db = db.as_ref().ok_or_else(|| invalid("db is NULL"))?;
        let plan = parse_plan(str_arg(plan, "plan")?).map_err(|e| (TdStatus::MalformedPlan, e.to_string()))?;
        let out_dir = Path::new(str_arg(out_dir, "out_dir")?);
        let chunk = match chunk_size {
            0 => ChunkPolicy::default(),
            n => ChunkPolicy::new(n).expect("nonzero"),
        };
        let opts = DumpOptions {
            chunk,
            overwrite,
            keep_going,
        };
        let run = dump_all(&mut db.db.connect(), &plan, &opts, out_dir, &|_| {});
        if let Some(s) = summary.as_mut() {
            *s = TdDumpSummary {
                tables_dumped: run.reports.len() as u64,
                tables_failed: run.failures.len() as u64,
                files_written: run.reports.iter().map(|r| r.files.len() as u64).sum(),
                records_dumped: run.reports.iter().map(|r| r.total_rows).sum(),
            };
        }
        match run.failures.first() {
            None => Ok(TdStatus::Ok),
            Some(e) if keep_going => {
                set_error(&e.to_string());
                Ok(TdStatus::PartialFailure)
            }
            Some(e) => Err((dump_status(e), e.to_string())),
        }
    })
}

/// Loads `count` dump files with `jobs` workers. `commit_batch` selects the
/// commit policy: 0 commits once per file, 1 per record, n every n records.
/// Returns `TD_STATUS_PARTIAL_FAILURE` if any record or file failed; the
/// message describes the first file-level error, if any. `summary` may be
/// NULL.
///
/// # Safety
/// `db` must come from this library; `paths` must point to `count` valid C
/// strings.
#[no_mangle]
pub unsafe extern "C" fn td_load(
    db: *const TdDatabase,
    paths: *const *const c_char,
    count: usize,
    jobs: usize,
    commit_batch: u64,
    salvage: bool,
    summary: *mut TdLoadSummary,
) -> TdStatus {
    guard(|| {
        let db = db.as_ref().ok_or_else(|| invalid("db is NULL"))?;
        if count > 0 && paths.is_null() {
            return Err(invalid("paths is NULL"));
        }
        let mut files = Vec::with_capacity(count);
        for i in 0..count {
            files.push(PathBuf::from(str_arg(*paths.add(i), "path")?));
        }
        let opts = LoadOptions {
            commit: match commit_batch {
                0 => CommitPolicy::PerFile,
                n => CommitPolicy::per_batch(n).expect("nonzero"),
            },
            mode: if salvage { ReadMode::Salvage } else { ReadMode::Strict },
            ..Default::default()
        };
        let factory = || -> Result<Box<dyn Connector>, BackendError> { Ok(Box::new(db.db.connect())) };
        let results = load_many(&factory, &files, &opts, jobs.max(1), &|_| {});
        let mut s = TdLoadSummary::default();
        let mut first_error = None;
        for r in &results {
            match r {
                Ok(report) => {
                    s.files_loaded += 1;
                    s.records_inserted += report.inserted;
                    s.records_failed += report.failed;
                }
                Err(e) => {
                    s.files_failed += 1;
                    if let Some(p) = e.partial_report() {
                        s.records_inserted += p.inserted;
                        s.records_failed += p.failed;
                    }
                    first_error.get_or_insert(e);
                }
            }
        }
        if let Some(out) = summary.as_mut() {
            *out = s;
        }
        if let Some(e) = first_error {
            if s.files_loaded == 0 && s.records_inserted == 0 {
                return Err((load_status(e), e.to_string()));
            }
            set_error(&e.to_string());
            return Ok(TdStatus::PartialFailure);
        }
        if s.records_failed > 0 {
            set_error(&format!("{} records failed to load", s.records_failed));
            return Ok(TdStatus::PartialFailure);
        }
        Ok(TdStatus::Ok)
    })
}

/// Reads a dump file completely. In strict mode any damage fails with
/// `TD_STATUS_CORRUPT`; in salvage mode the intact records are returned and
/// only a missing header is an error.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_file_open(path: *const c_char, salvage: bool, out: *mut *mut TdDumpFile) -> TdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let src = File::open(path).map_err(|e| (TdStatus::Io, format!("{path}: {e}")))?;
        let (header, rows, report) = if salvage {
            let s = read_salvage(BufReader::new(src)).map_err(|e| (TdStatus::Io, format!("{path}: {e}")))?;
            let header = s
                .header
                .ok_or_else(|| (TdStatus::Corrupt, format!("{path}: no intact header frame")))?;
            (header, s.rows, Some(s.report))
        } else {
            let (h, rows) = read_strict(BufReader::new(src)).map_err(format_failure)?;
            (h, rows, None)
        };
        let cstring = |s: String| CString::new(s).map_err(|_| (TdStatus::Corrupt, "embedded NUL in header".to_owned()));
        *out = Box::into_raw(Box::new(TdDumpFile {
            table_name: cstring(header.table_name)?,
            insert_sql: cstring(header.insert_sql)?,
            chunk_index: header.chunk_index,
            column_count: header.column_count,
            rows,
            salvage: report,
        }));
        Ok(TdStatus::Ok)
    })
}

/// Table name from the header; owned by `file`. NULL if `file` is NULL.
///
/// # Safety
/// `file` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn td_file_table_name(file: *const TdDumpFile) -> *const c_char {
    file.as_ref().map_or(ptr::null(), |f| f.table_name.as_ptr())
}

/// Insert statement from the header; owned by `file`. NULL if `file` is NULL.
///
/// # Safety
/// `file` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn td_file_insert_sql(file: *const TdDumpFile) -> *const c_char {
    file.as_ref().map_or(ptr::null(), |f| f.insert_sql.as_ptr())
}

/// # Safety
/// `file` must come from this library or be NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn td_file_chunk_index(file: *const TdDumpFile) -> u32 {
    file.as_ref().map_or(0, |f| f.chunk_index)
}

/// # Safety
/// `file` must come from this library or be NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn td_file_column_count(file: *const TdDumpFile) -> u16 {
    file.as_ref().map_or(0, |f| f.column_count)
}

/// # Safety
/// `file` must come from this library or be NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn td_file_record_count(file: *const TdDumpFile) -> u64 {
    file.as_ref().map_or(0, |f| f.rows.len() as u64)
}

/// Field `column` of record `record` (both 0-based). Pointers in `out` stay
/// valid until `file` is freed.
///
/// # Safety
/// `file` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_file_field(
    file: *const TdDumpFile,
    record: u64,
    column: u16,
    out: *mut TdField,
) -> TdStatus {
    guard(|| {
        let f = file.as_ref().ok_or_else(|| invalid("file is NULL"))?;
        let out = out_arg(out, "out")?;
        let row = usize::try_from(record)
            .ok()
            .and_then(|i| f.rows.get(i))
            .ok_or_else(|| invalid(format!("record {record} out of range ({} records)", f.rows.len())))?;
        let value = row
            .0
            .get(column as usize)
            .ok_or_else(|| invalid(format!("column {column} out of range ({} columns)", row.len())))?;
        let mut field = TdField {
            kind: TdValueKind::Null,
            int_value: 0,
            float_value: 0.0,
            data: ptr::null(),
            len: 0,
        };
        match value {
            Value::Null => {}
            Value::Int(v) => {
                field.kind = TdValueKind::Int;
                field.int_value = *v;
            }
            Value::Float(v) => {
                field.kind = TdValueKind::Float;
                field.float_value = *v;
            }
            Value::Text(s) => {
                field.kind = TdValueKind::Text;
                field.data = s.as_ptr();
                field.len = s.len();
            }
            Value::Bytes(b) => {
                field.kind = TdValueKind::Bytes;
                field.data = b.as_ptr();
                field.len = b.len();
            }
        }
        *out = field;
        Ok(TdStatus::Ok)
    })
}

/// Salvage statistics for a file opened in salvage mode.
///
/// # Safety
/// `file` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn td_file_salvage_report(file: *const TdDumpFile, out: *mut TdSalvageReport) -> TdStatus {
    guard(|| {
        let f = file.as_ref().ok_or_else(|| invalid("file is NULL"))?;
        let out = out_arg(out, "out")?;
        let report = f
            .salvage
            .as_ref()
            .ok_or_else(|| invalid("file was opened in strict mode"))?;
        *out = report.into();
        Ok(TdStatus::Ok)
    })
}

/// Releases a dump file handle. NULL is ignored.
///
/// # Safety
/// `file` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn td_file_free(file: *mut TdDumpFile) {
    if !file.is_null() {
        drop(Box::from_raw(file));
    }
}

/// Strictly reads a dump file: `TD_STATUS_OK` if intact, otherwise
/// `TD_STATUS_CORRUPT` (or `TD_STATUS_IO`). `records` may be NULL.
///
/// # Safety
/// `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn td_verify(path: *const c_char, records: *mut u64) -> TdStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let src = File::open(path).map_err(|e| (TdStatus::Io, format!("{path}: {e}")))?;
        let (_, rows) = read_strict(BufReader::new(src)).map_err(|e| {
            let (status, msg) = format_failure(e);
            (status, format!("{path}: {msg}"))
        })?;
        if let Some(r) = records.as_mut() {
            *r = rows.len() as u64;
        }
        Ok(TdStatus::Ok)
    })
}

/// Rewrites the intact records of `path` as a fresh dump file at
/// `out_path`. Fails with `TD_STATUS_CORRUPT` (writing nothing) when no
/// header survived. `report` may be NULL.
///
/// # Safety
/// Strings must be valid C strings.
#[no_mangle]
pub unsafe extern "C" fn td_salvage(
    path: *const c_char,
    out_path: *const c_char,
    report: *mut TdSalvageReport,
) -> TdStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out_path = str_arg(out_path, "out_path")?;
        let src = File::open(path).map_err(|e| (TdStatus::Io, format!("{path}: {e}")))?;
        let s = read_salvage(BufReader::new(src)).map_err(|e| (TdStatus::Io, format!("{path}: {e}")))?;
        if let Some(r) = report.as_mut() {
            *r = (&s.report).into();
        }
        let header = s
            .header
            .ok_or_else(|| (TdStatus::Corrupt, format!("{path}: no intact header frame")))?;
        let sink = File::create(out_path).map_err(|e| (TdStatus::Io, format!("{out_path}: {e}")))?;
        write_dump_file(sink, &header, &s.rows).map_err(format_failure)?;
        Ok(TdStatus::Ok)
    })
}
