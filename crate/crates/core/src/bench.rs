//! Throughput measurement on synthetic data in the reference backend.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{BackendError, Connector, MemoryDatabase, NativeCell};
use crate::dump::{dump_table, DumpError, DumpOptions};
use crate::load::{load_many, LoadError, LoadOptions};
use crate::model::{ChunkPolicy, CommitPolicy, TableSpec};

pub const BENCH_TABLE: &str = "cross_rate";

pub const BENCH_DDL: &str = "set sql dialect 1;
create table cross_rate (
    from_currency varchar(10) not null,
    to_currency varchar(10) not null,
    conv_rate float not null,
    update_date date,
    primary key (from_currency, to_currency));";

pub const BENCH_SELECT: &str =
    "select from_currency, to_currency, conv_rate, cast(update_date as char(24)) from cross_rate";

pub const BENCH_INSERT: &str =
    "insert into cross_rate (from_currency, to_currency, conv_rate, update_date) values (?, ?, ?, ?)";

/// Builds a cross_rate table holding `rows` records with distinct keys.
pub fn synthetic_database(rows: u64, seed: u64) -> MemoryDatabase {
    let db = MemoryDatabase::from_script(BENCH_DDL).expect("bench schema");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epoch = NaiveDate::from_ymd_opt(1990, 1, 1).expect("valid date");
    for i in 0..rows {
        let date = epoch + chrono::Days::new(rng.gen_range(0..10_000));
        let cells = vec![
            NativeCell::Char(format!("F{}", i / 1000)),
            NativeCell::Char(format!("T{}", i % 1000)),
            NativeCell::Float(rng.gen_range(0.0001f32..200.0)),
            NativeCell::Timestamp(date.and_hms_opt(0, 0, 0).expect("midnight")),
        ];
        db.insert_native(BENCH_TABLE, cells).expect("synthetic keys are unique");
    }
    db
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rows: u64,
    pub chunk: ChunkPolicy,
    pub work_dir: PathBuf,
    /// Each (commit, jobs) pair is loaded into a fresh table.
    pub loads: Vec<(CommitPolicy, usize)>,
    pub seed: u64,
    /// Per-commit cost applied to the load targets.
    pub commit_latency: Duration,
}

#[derive(Debug, Clone)]
pub struct LoadTiming {
    pub commit: CommitPolicy,
    pub jobs: usize,
    pub inserted: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: u64,
    pub files: usize,
    pub dump_elapsed: Duration,
    pub loads: Vec<LoadTiming>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Dump(#[from] DumpError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{commit} with {jobs} jobs inserted {inserted} of {expected} records")]
    Incomplete {
        commit: CommitPolicy,
        jobs: usize,
        inserted: u64,
        expected: u64,
    },
}

/// Records per minute, or `None` when nothing was timed.
pub fn records_per_minute(records: u64, elapsed: Duration) -> Option<f64> {
    if records == 0 || elapsed.is_zero() {
        return None;
    }
    Some(records as f64 * 60.0 / elapsed.as_secs_f64())
}

fn rate(records: u64, elapsed: Duration) -> String {
    match records_per_minute(records, elapsed) {
        Some(r) => format!("{r:.0} records/minute"),
        None => "n/a".to_owned(),
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "dump  rows={} files={} time={:.3}s  {}",
            self.rows,
            self.files,
            self.dump_elapsed.as_secs_f64(),
            rate(self.rows, self.dump_elapsed)
        )?;
        for l in &self.loads {
            writeln!(
                f,
                "load  commit={} jobs={} time={:.3}s  {}",
                l.commit,
                l.jobs,
                l.elapsed.as_secs_f64(),
                rate(l.inserted, l.elapsed)
            )?;
        }
        Ok(())
    }
}

pub fn run(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let source = synthetic_database(cfg.rows, cfg.seed);
    run_on(&source, cfg)
}

/// Dumps `source`'s cross_rate table into `cfg.work_dir`, then times each
/// configured load into an empty copy of the schema.
pub fn run_on(source: &MemoryDatabase, cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    let spec = TableSpec::new(BENCH_TABLE, BENCH_SELECT, BENCH_INSERT).expect("bench spec");
    let opts = DumpOptions {
        chunk: cfg.chunk,
        overwrite: true,
        keep_going: false,
    };
    let started = Instant::now();
    let dumped = dump_table(&mut source.connect(), &spec, &opts, &cfg.work_dir, &|_| {})?;
    let dump_elapsed = started.elapsed();
    let files: Vec<PathBuf> = dumped.files.iter().map(|f| f.path.clone()).collect();

    let mut loads = Vec::new();
    for &(commit, jobs) in &cfg.loads {
        let target = source.empty_clone();
        target.set_commit_latency(cfg.commit_latency);
        let factory = || -> Result<Box<dyn Connector>, BackendError> { Ok(Box::new(target.connect())) };
        let lo = LoadOptions {
            commit,
            ..Default::default()
        };
        let started = Instant::now();
        let results = load_many(&factory, &files, &lo, jobs, &|_| {});
        let elapsed = started.elapsed();
        let mut inserted = 0;
        for r in results {
            inserted += r?.inserted;
        }
        if inserted != dumped.total_rows {
            return Err(BenchError::Incomplete {
                commit,
                jobs,
                inserted,
                expected: dumped.total_rows,
            });
        }
        loads.push(LoadTiming {
            commit,
            jobs,
            inserted,
            elapsed,
        });
    }
    Ok(BenchReport {
        rows: dumped.total_rows,
        files: files.len(),
        dump_elapsed,
        loads,
    })
}

/// Removes the chunk files a bench run left in `dir`.
pub fn clean_work_dir(dir: &Path) -> std::io::Result<()> {
    for (_, path) in crate::dump::existing_chunks(dir, BENCH_TABLE)? {
        std::fs::remove_file(path)?;
    }
    Ok(())
}
