//! Restores dump files into a database.
//!
//! Every record is inserted with the header's insert statement. A record the
//! database rejects is counted and skipped; loading continues. With batched
//! commits a rejected record rolls back its batch, which is then replayed one
//! record at a time so that only the records that genuinely fail are lost.

use std::fs::File;
use std::io::{self, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::backend::{BackendError, Connector, ConnectorFactory};
use crate::format::{read_salvage, read_strict, FormatError, SalvageReport};
use crate::model::{count_placeholders, CommitPolicy, Row};

pub const DEFAULT_FAILURE_CAP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReadMode {
    #[default]
    Strict,
    Salvage,
}

impl std::str::FromStr for ReadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ReadMode::Strict),
            "salvage" => Ok(ReadMode::Salvage),
            other => Err(format!("expected strict or salvage, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub commit: CommitPolicy,
    pub mode: ReadMode,
    /// Maximum number of detailed failure entries kept per file.
    pub failure_cap: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            commit: CommitPolicy::PerRecord,
            mode: ReadMode::Strict,
            failure_cap: DEFAULT_FAILURE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadFailure {
    /// 1-based position of the record in the file (or in the recovered
    /// sequence, in salvage mode).
    pub ordinal: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadReport {
    pub file: PathBuf,
    pub table_name: String,
    pub attempted: u64,
    pub inserted: u64,
    pub failed: u64,
    /// At most `failure_cap` entries; `failed` stays exact.
    pub failures: Vec<LoadFailure>,
    /// False when the load was cut short (connection lost).
    pub complete: bool,
    /// Present in salvage mode.
    pub salvage: Option<SalvageReport>,
}

impl LoadReport {
    fn new(file: &Path, table_name: &str) -> Self {
        LoadReport {
            file: file.to_owned(),
            table_name: table_name.to_owned(),
            attempted: 0,
            inserted: 0,
            failed: 0,
            failures: Vec::new(),
            complete: true,
            salvage: None,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.complete && self.failed == 0
    }
}

#[derive(Debug)]
pub enum LoadEvent<'a> {
    RecordFailed {
        file: &'a Path,
        ordinal: u64,
        row: &'a Row,
        error: &'a BackendError,
    },
    FileLoaded { report: &'a LoadReport },
    FileFailed { file: &'a Path, error: &'a LoadError },
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Open { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: FormatError },
    #[error("{}: no intact header frame; cannot tell which statement restores these records", path.display())]
    NoHeader { path: PathBuf },
    #[error("{}: insert statement has {placeholders} placeholders but records have {columns} columns", path.display())]
    ArityMismatch {
        path: PathBuf,
        placeholders: usize,
        columns: usize,
    },
    #[error("{}: connection lost after {} of the file's records were settled: {source}", report.file.display(), report.attempted)]
    ConnectionLost {
        report: Box<LoadReport>,
        source: BackendError,
    },
    #[error("{}: could not connect: {source}", path.display())]
    Connect { path: PathBuf, source: BackendError },
    #[error("{}: loader worker panicked", path.display())]
    WorkerPanicked { path: PathBuf },
}

impl LoadError {
    /// The partial report, for errors raised after inserting began.
    pub fn partial_report(&self) -> Option<&LoadReport> {
        match self {
            LoadError::ConnectionLost { report, .. } => Some(report),
            _ => None,
        }
    }
}

struct Loader<'a> {
    conn: &'a mut dyn Connector,
    sql: &'a str,
    report: LoadReport,
    cap: usize,
    progress: &'a (dyn Fn(&LoadEvent<'_>) + Sync),
}

/// Signals a lost connection up to `load_file`.
struct Lost(BackendError);

impl Loader<'_> {
    fn lost_or(&self, e: BackendError) -> Result<BackendError, Lost> {
        if e.is_connection_lost() {
            Err(Lost(e))
        } else {
            Ok(e)
        }
    }

    fn fail(&mut self, ordinal: u64, row: &Row, error: BackendError) {
        log::debug!("unable to load record {ordinal} of {}: {row}", self.report.file.display());
        (self.progress)(&LoadEvent::RecordFailed {
            file: &self.report.file,
            ordinal,
            row,
            error: &error,
        });
        self.report.attempted += 1;
        self.report.failed += 1;
        if self.report.failures.len() < self.cap {
            self.report.failures.push(LoadFailure {
                ordinal,
                error: error.to_string(),
            });
        }
    }

    /// Inserts and commits `batch` (whose first record has ordinal `first`).
    fn run_batch(&mut self, first: u64, batch: &[Row]) -> Result<(), Lost> {
        self.conn.begin().map_err(Lost)?;
        let mut failure = None;
        for (i, row) in batch.iter().enumerate() {
            if let Err(e) = self.conn.insert(self.sql, row) {
                failure = Some((i, self.lost_or(e)?));
                break;
            }
        }
        if failure.is_none() {
            match self.conn.commit() {
                Ok(()) => {
                    self.report.attempted += batch.len() as u64;
                    self.report.inserted += batch.len() as u64;
                    return Ok(());
                }
                Err(e) => failure = Some((0, self.lost_or(e)?)),
            }
        }
        let (at, err) = failure.expect("set above");
        self.rollback()?;
        if batch.len() == 1 {
            self.fail(first, &batch[0], err);
            return Ok(());
        }
        log::debug!(
            "batch at record {first} of {} rolled back ({err}); replaying record by record",
            self.report.file.display()
        );
        let _ = at;
        for (i, row) in batch.iter().enumerate() {
            self.run_batch(first + i as u64, std::slice::from_ref(row))?;
        }
        Ok(())
    }

    fn rollback(&mut self) -> Result<(), Lost> {
        match self.conn.rollback() {
            Err(e) if e.is_connection_lost() => Err(Lost(e)),
            // A failed rollback of a failed transaction leaves nothing behind
            // for the engines to clean up.
            _ => Ok(()),
        }
    }
}

/// Loads one dump file over `conn`.
pub fn load_file(
    conn: &mut dyn Connector,
    file: &Path,
    opts: &LoadOptions,
    progress: &(dyn Fn(&LoadEvent<'_>) + Sync),
) -> Result<LoadReport, LoadError> {
    let result = load_file_inner(conn, file, opts, progress);
    match &result {
        Ok(report) => progress(&LoadEvent::FileLoaded { report }),
        Err(error) => progress(&LoadEvent::FileFailed { file, error }),
    }
    result
}

fn load_file_inner(
    conn: &mut dyn Connector,
    file: &Path,
    opts: &LoadOptions,
    progress: &(dyn Fn(&LoadEvent<'_>) + Sync),
) -> Result<LoadReport, LoadError> {
    let source = File::open(file).map_err(|source| LoadError::Open {
        path: file.to_owned(),
        source,
    })?;
    let source = BufReader::with_capacity(256 * 1024, source);
    let (header, rows, salvage) = match opts.mode {
        ReadMode::Strict => {
            let (h, rows) = read_strict(source).map_err(|source| LoadError::Read {
                path: file.to_owned(),
                source,
            })?;
            (h, rows, None)
        }
        ReadMode::Salvage => {
            let s = read_salvage(source).map_err(|e| LoadError::Read {
                path: file.to_owned(),
                source: e.into(),
            })?;
            let header = s.header.ok_or_else(|| LoadError::NoHeader { path: file.to_owned() })?;
            (header, s.rows, Some(s.report))
        }
    };

    let placeholders = count_placeholders(&header.insert_sql);
    if placeholders != header.column_count as usize {
        return Err(LoadError::ArityMismatch {
            path: file.to_owned(),
            placeholders,
            columns: header.column_count as usize,
        });
    }

    let mut loader = Loader {
        conn,
        sql: &header.insert_sql,
        report: LoadReport::new(file, &header.table_name),
        cap: opts.failure_cap,
        progress,
    };
    loader.report.salvage = salvage;

    let batch = opts
        .commit
        .batch_size()
        .map_or(rows.len().max(1), |n| usize::try_from(n).unwrap_or(usize::MAX));
    for (i, chunk) in rows.chunks(batch).enumerate() {
        let first = (i * batch) as u64 + 1;
        if let Err(Lost(source)) = loader.run_batch(first, chunk) {
            let mut report = loader.report;
            report.complete = false;
            return Err(LoadError::ConnectionLost {
                report: Box::new(report),
                source,
            });
        }
    }
    Ok(loader.report)
}

/// Loads `files` with up to `workers` parallel workers, each holding its own
/// connection and loading its share of files one at a time. Results come back
/// in input order. With one worker this is a plain sequential restore.
pub fn load_many(
    factory: &dyn ConnectorFactory,
    files: &[PathBuf],
    opts: &LoadOptions,
    workers: usize,
    progress: &(dyn Fn(&LoadEvent<'_>) + Sync),
) -> Vec<Result<LoadReport, LoadError>> {
    let workers = workers.max(1).min(files.len());
    let slots: Vec<Mutex<Option<Result<LoadReport, LoadError>>>> = files.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let connect_error: Mutex<Option<BackendError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut conn = match factory.connect() {
                    Ok(c) => c,
                    Err(e) => {
                        *connect_error.lock().expect("poisoned") = Some(e);
                        return;
                    }
                };
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(path) = files.get(i) else { break };
                    let outcome = catch_unwind(AssertUnwindSafe(|| load_file(conn.as_mut(), path, opts, progress)));
                    let (outcome, healthy) = match outcome {
                        Ok(Err(e @ LoadError::ConnectionLost { .. })) => (Err(e), false),
                        Ok(r) => (r, true),
                        Err(_) => (Err(LoadError::WorkerPanicked { path: path.clone() }), false),
                    };
                    *slots[i].lock().expect("poisoned") = Some(outcome);
                    if !healthy {
                        // Remaining files go to the other workers unless a
                        // fresh connection can be had.
                        match factory.connect() {
                            Ok(c) => conn = c,
                            Err(e) => {
                                *connect_error.lock().expect("poisoned") = Some(e);
                                return;
                            }
                        }
                    }
                }
                let _ = conn.close();
            });
        }
    });

    let connect_error = connect_error.into_inner().expect("poisoned");
    slots
        .into_iter()
        .zip(files)
        .map(|(slot, path)| {
            slot.into_inner().expect("poisoned").unwrap_or_else(|| {
                Err(LoadError::Connect {
                    path: path.clone(),
                    source: connect_error
                        .clone()
                        .unwrap_or_else(|| BackendError::ConnectionLost("no loader worker available".into())),
                })
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MemoryDatabase, NativeCell};
    use crate::format::{write_dump_file, DumpFileHeader};
    use crate::model::Value;

    const INSERT: &str = "insert into kv (k, v) values (?, ?)";

    fn kv_db() -> MemoryDatabase {
        MemoryDatabase::from_script("create table kv (k integer primary key, v varchar(20));").unwrap()
    }

    fn kv_file(dir: &Path, name: &str, keys: impl IntoIterator<Item = i64>) -> PathBuf {
        let rows: Vec<Row> = keys.into_iter().map(|k| Row(vec![Value::Int(k), format!("v{k}").into()])).collect();
        let path = dir.join(name);
        write_dump_file(File::create(&path).unwrap(), &DumpFileHeader::new("kv", INSERT, 1, 2), &rows).unwrap();
        path
    }

    fn keys(db: &MemoryDatabase) -> Vec<i64> {
        let mut k: Vec<i64> = db
            .scan_native("kv")
            .unwrap()
            .into_iter()
            .map(|r| match r[0] {
                NativeCell::Integer(i) => i,
                _ => unreachable!(),
            })
            .collect();
        k.sort();
        k
    }

    fn opts(commit: CommitPolicy) -> LoadOptions {
        LoadOptions {
            commit,
            ..Default::default()
        }
    }

    const POLICIES: [CommitPolicy; 3] = [CommitPolicy::PerRecord, CommitPolicy::PerBatch(4), CommitPolicy::PerFile];

    #[test]
    fn loads_all_records_under_every_policy() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", 0..10);
        for policy in POLICIES {
            let db = kv_db();
            let r = load_file(&mut db.connect(), &f, &opts(policy), &|_| {}).unwrap();
            assert_eq!((r.attempted, r.inserted, r.failed), (10, 10, 0), "{policy}");
            assert!(r.is_clean());
            assert_eq!(keys(&db), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn failures_isolated_under_every_policy() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", 0..10);
        for policy in POLICIES {
            let db = kv_db();
            db.insert_native("kv", vec![NativeCell::Integer(3), NativeCell::Char("old".into())]).unwrap();
            db.insert_native("kv", vec![NativeCell::Integer(8), NativeCell::Char("old".into())]).unwrap();
            let r = load_file(&mut db.connect(), &f, &opts(policy), &|_| {}).unwrap();
            assert_eq!((r.attempted, r.inserted, r.failed), (10, 8, 2), "{policy}");
            let ordinals: Vec<_> = r.failures.iter().map(|f| f.ordinal).collect();
            assert_eq!(ordinals, [4, 9], "{policy}");
            assert_eq!(keys(&db), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn duplicate_within_file_is_caught_by_replay() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", [1, 2, 1, 3]);
        for policy in POLICIES {
            let db = kv_db();
            let r = load_file(&mut db.connect(), &f, &opts(policy), &|_| {}).unwrap();
            assert_eq!((r.inserted, r.failed), (3, 1), "{policy}");
            assert_eq!(r.failures[0].ordinal, 3);
        }
    }

    #[test]
    fn failure_cap_keeps_counts_exact() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", 0..20);
        let db = kv_db();
        for k in 0..15 {
            db.insert_native("kv", vec![NativeCell::Integer(k), NativeCell::Null]).unwrap();
        }
        let o = LoadOptions {
            failure_cap: 4,
            ..Default::default()
        };
        let r = load_file(&mut db.connect(), &f, &o, &|_| {}).unwrap();
        assert_eq!((r.failed, r.failures.len()), (15, 4));
    }

    #[test]
    fn empty_file_loads_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", []);
        let db = kv_db();
        let r = load_file(&mut db.connect(), &f, &LoadOptions::default(), &|_| {}).unwrap();
        assert_eq!((r.attempted, r.inserted, r.failed), (0, 0, 0));
    }

    #[test]
    fn arity_mismatch_refuses_before_inserting() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.dump");
        let rows = vec![Row(vec![Value::Int(1), Value::Null])];
        write_dump_file(
            File::create(&path).unwrap(),
            &DumpFileHeader::new("kv", "insert into kv (k) values (?)", 1, 2),
            &rows,
        )
        .unwrap();
        let db = kv_db();
        let err = load_file(&mut db.connect(), &path, &LoadOptions::default(), &|_| {}).unwrap_err();
        assert!(matches!(err, LoadError::ArityMismatch { placeholders: 1, columns: 2, .. }));
        assert_eq!(db.row_count("kv").unwrap(), 0);
    }

    #[test]
    fn strict_refuses_corrupt_file_salvage_loads_rest() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", 0..5);
        let mut bytes = std::fs::read(&f).unwrap();
        let len = bytes.len();
        bytes[len - 30] ^= 0xFF;
        std::fs::write(&f, &bytes).unwrap();

        let db = kv_db();
        let err = load_file(&mut db.connect(), &f, &LoadOptions::default(), &|_| {}).unwrap_err();
        assert!(matches!(err, LoadError::Read { .. }));
        assert_eq!(db.row_count("kv").unwrap(), 0);

        let o = LoadOptions {
            mode: ReadMode::Salvage,
            ..Default::default()
        };
        let r = load_file(&mut db.connect(), &f, &o, &|_| {}).unwrap();
        let s = r.salvage.as_ref().unwrap();
        assert_eq!(s.records_recovered, 4);
        assert_eq!(r.attempted, s.records_recovered);
        assert_eq!(r.inserted, 4);
    }

    #[test]
    fn connection_loss_returns_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        let f = kv_file(dir.path(), "kv.1.dump", 0..10);
        let db = kv_db();
        let mut conn = db.connect();
        conn.fail_after_inserts(6);
        let err = load_file(&mut conn, &f, &opts(CommitPolicy::PerBatch(4)), &|_| {}).unwrap_err();
        let partial = err.partial_report().unwrap();
        assert!(!partial.complete);
        assert_eq!((partial.attempted, partial.inserted), (4, 4));
        assert_eq!(db.row_count("kv").unwrap(), 4);
    }

    #[test]
    fn parallel_matches_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let files: Vec<PathBuf> = (0..6)
            .map(|i| kv_file(dir.path(), &format!("kv.{}.dump", i + 1), i * 50..(i + 1) * 50))
            .collect();
        for workers in [1, 2, 4, 8] {
            let db = kv_db();
            let factory = || -> Result<Box<dyn Connector>, BackendError> { Ok(Box::new(db.connect())) };
            let out = load_many(&factory, &files, &opts(CommitPolicy::PerBatch(7)), workers, &|_| {});
            assert_eq!(out.len(), 6);
            for (r, f) in out.iter().zip(&files) {
                let r = r.as_ref().unwrap();
                assert_eq!(&r.file, f);
                assert_eq!(r.inserted, 50);
            }
            assert_eq!(keys(&db), (0..300).collect::<Vec<_>>());
        }
        let db = kv_db();
        let factory = || -> Result<Box<dyn Connector>, BackendError> { Ok(Box::new(db.connect())) };
        assert!(load_many(&factory, &[], &LoadOptions::default(), 4, &|_| {}).is_empty());
    }

    #[test]
    fn unreachable_database_fails_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let files = vec![kv_file(dir.path(), "a.dump", 0..2), kv_file(dir.path(), "b.dump", 2..4)];
        let factory = || -> Result<Box<dyn Connector>, BackendError> {
            Err(BackendError::Open {
                dsn: "nowhere".into(),
                reason: "refused".into(),
            })
        };
        let out = load_many(&factory, &files, &LoadOptions::default(), 2, &|_| {});
        assert!(out.iter().all(|r| matches!(r, Err(LoadError::Connect { .. }))));
    }

    #[test]
    fn missing_file_reported_per_file() {
        let dir = tempfile::tempdir().unwrap();
        let good = kv_file(dir.path(), "kv.1.dump", 0..3);
        let files = vec![dir.path().join("nope.dump"), good];
        let db = kv_db();
        let factory = || -> Result<Box<dyn Connector>, BackendError> { Ok(Box::new(db.connect())) };
        let out = load_many(&factory, &files, &LoadOptions::default(), 1, &|_| {});
        assert!(matches!(out[0], Err(LoadError::Open { .. })));
        assert_eq!(out[1].as_ref().unwrap().inserted, 3);
    }
}
