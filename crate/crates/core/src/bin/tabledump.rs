use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabledump::backend::{BackendError, ConnectionConfig, Connector, MemoryDatabase};
use tabledump::bench::{self, BenchConfig};
use tabledump::dump::{dump_all, DumpEvent};
use tabledump::format::SalvageReport;
use tabledump::load::{load_many, LoadEvent};
use tabledump::{
    parse_plan, read_salvage, read_strict, write_dump_file, ChunkPolicy, CommitPolicy, DumpOptions,
    LoadOptions, ReadMode,
};

/// Table-level logical backup and restore.
///
/// The database (DSN) is a reference database snapshot file; create one from
/// an SQL script with `init`.
#[derive(Parser)]
#[command(name = "tabledump", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Conn {
    /// Database to connect to.
    #[arg(long, env = "TD_DSN")]
    dsn: Option<String>,
    #[arg(long, short = 'u', env = "TD_USER", default_value = "")]
    user: String,
    #[arg(long, short = 'p', env = "TD_PASSWORD", default_value = "", hide_env_values = true)]
    password: String,
}

#[derive(Subcommand)]
enum Command {
    /// Create a database from an SQL script.
    Init {
        #[command(flatten)]
        conn: Conn,
        script: PathBuf,
        /// Replace an existing database file.
        #[arg(long)]
        force: bool,
    },
    /// Dump the tables listed in a plan file.
    Dump {
        #[command(flatten)]
        conn: Conn,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Records per dump file.
        #[arg(long, default_value_t = 500_000, value_parser = clap::value_parser!(u64).range(1..))]
        chunk_size: u64,
        /// Replace existing dump files of the same table.
        #[arg(long)]
        overwrite: bool,
        /// Continue with the next table after a failure.
        #[arg(long)]
        keep_going: bool,
    },
    /// Load dump files. Without --dsn, the first three arguments are
    /// <path_to_database> <database_user> <database_password>.
    Load {
        #[command(flatten)]
        conn: Conn,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: u64,
        /// record, batch:N or file
        #[arg(long, default_value = "record")]
        commit: CommitPolicy,
        /// strict or salvage
        #[arg(long, default_value = "strict")]
        mode: ReadMode,
        #[arg(value_name = "ARGS")]
        args: Vec<String>,
    },
    /// Print a dump file's header and record count.
    Inspect { file: PathBuf },
    /// Strictly read every file; fail if any is damaged.
    Verify {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Recover the intact records of a damaged file into a fresh file.
    Salvage { file: PathBuf, out: PathBuf },
    /// Write a corrupted copy of a file (testing aid).
    Corrupt {
        file: PathBuf,
        out: PathBuf,
        #[arg(long = "i-know-this-destroys-data", required = true)]
        acknowledged: bool,
        /// Byte offset to corrupt (repeatable).
        #[arg(long = "offset")]
        offsets: Vec<u64>,
        /// Replacement byte for the matching --offset; bits are flipped when omitted.
        #[arg(long = "value", value_parser = parse_byte)]
        values: Vec<u8>,
        /// Corrupt --count random positions chosen by this seed.
        #[arg(long, conflicts_with = "offsets")]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1, requires = "seed")]
        count: u32,
    },
    /// Measure dump and load throughput on synthetic rows.
    Bench {
        #[arg(long, default_value_t = 1_000_000)]
        rows: u64,
        #[arg(long, default_value_t = 500_000, value_parser = clap::value_parser!(u64).range(1..))]
        chunk_size: u64,
        /// Worker count compared against a single worker.
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
        jobs: u64,
        /// Commit policy for the jobs comparison.
        #[arg(long, default_value = "batch:1000")]
        commit: CommitPolicy,
        /// Directory for the dump files; a temporary one by default.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulated cost of one commit, in microseconds.
        #[arg(long, default_value_t = 5)]
        commit_latency_us: u64,
    },
}

/// Bad invocation; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn parse_byte(s: &str) -> Result<u8, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| format!("expected a byte (0-255 or 0x00-0xFF), got {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn open_db(cfg: &ConnectionConfig) -> Result<MemoryDatabase> {
    log::debug!("opening {cfg:?}");
    Ok(MemoryDatabase::open(&cfg.dsn)?)
}

fn config(conn: Conn) -> Result<ConnectionConfig> {
    let dsn = conn.dsn.ok_or_else(|| usage("no database given (--dsn or TD_DSN)"))?;
    ConnectionConfig::new(dsn, conn.user, conn.password).ok_or_else(|| usage("--dsn must not be empty"))
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Init { conn, script, force } => {
            let cfg = config(conn)?;
            if Path::new(&cfg.dsn).exists() && !force {
                bail!("{} already exists (use --force to replace it)", cfg.dsn);
            }
            let sql = fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            let db = MemoryDatabase::from_script(&sql)?;
            db.save(&cfg.dsn)?;
            for t in db.table_names() {
                println!("table {t}: {} records", db.row_count(&t)?);
            }
            Ok(true)
        }
        Command::Dump {
            conn,
            plan,
            out,
            chunk_size,
            overwrite,
            keep_going,
        } => {
            let cfg = config(conn)?;
            let text = fs::read_to_string(&plan).map_err(|e| usage(format!("cannot read plan {}: {e}", plan.display())))?;
            let plan = parse_plan(&text).map_err(|e| usage(format!("{}: {e}", plan.display())))?;
            let db = open_db(&cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let opts = DumpOptions {
                chunk: ChunkPolicy::new(chunk_size).expect("range checked"),
                overwrite,
                keep_going,
            };
            let run = dump_all(&mut db.connect(), &plan, &opts, &out, &|ev| match ev {
                DumpEvent::TableStarted { table } => println!("Dumping table: {table}"),
                DumpEvent::FileWritten { path, records } => {
                    let name = path.file_name().unwrap_or(path.as_os_str());
                    println!("{records} records dumped into {} file", name.to_string_lossy());
                }
                DumpEvent::TableFinished { report } => {
                    println!("Total number of records in {} table: {}", report.table_name, report.total_rows);
                    println!("Dumping {} table successful.", report.table_name);
                }
            });
            for r in &run.reports {
                for f in &r.files {
                    println!("file={} records={}", f.path.display(), f.records);
                }
            }
            for e in &run.failures {
                eprintln!("error: dumping table {} failed: {e}", e.table());
            }
            Ok(run.is_success())
        }
        Command::Load {
            conn,
            jobs,
            commit,
            mode,
            args,
        } => {
            let (cfg, files) = match conn.dsn {
                Some(_) => (config(conn)?, args),
                None => {
                    if args.len() < 4 {
                        return Err(usage(
                            "Usage: tabledump load <path_to_database> <database_user> <database_password> <dump_file>+\n       tabledump load --dsn <path_to_database> [-u USER] [-p PASSWORD] <dump_file>+",
                        ));
                    }
                    let mut it = args.into_iter();
                    let (dsn, user, password) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
                    let cfg = ConnectionConfig::new(dsn, user, password).ok_or_else(|| usage("empty database path"))?;
                    (cfg, it.collect())
                }
            };
            if files.is_empty() {
                return Err(usage("no dump files given"));
            }
            let files: Vec<PathBuf> = files.into_iter().map(PathBuf::from).collect();
            let db = open_db(&cfg)?;
            let opts = LoadOptions {
                commit,
                mode,
                ..Default::default()
            };
            let factory = || -> Result<Box<dyn Connector>, BackendError> { Ok(Box::new(db.connect())) };
            let out = Mutex::new(());
            let results = load_many(&factory, &files, &opts, jobs as usize, &|ev| {
                let _g = out.lock().expect("stdout lock");
                match ev {
                    LoadEvent::RecordFailed { file, ordinal, error, .. } => {
                        println!("Unable to load record: {ordinal} ({}: {error})", file.display())
                    }
                    LoadEvent::FileLoaded { report } => {
                        if report.failed == 0 {
                            println!("{} file loaded successful.", report.file.display());
                        } else {
                            println!("{} file loaded with {} failed records.", report.file.display(), report.failed);
                        }
                    }
                    LoadEvent::FileFailed { error, .. } => eprintln!("error: {error}"),
                }
            });
            let mut ok = true;
            for r in &results {
                let report = match r {
                    Ok(report) => report,
                    Err(e) => {
                        ok = false;
                        match e.partial_report() {
                            Some(p) => p,
                            None => continue,
                        }
                    }
                };
                ok &= report.is_clean();
                print!(
                    "file={} table={} inserted={} failed={}",
                    report.file.display(),
                    report.table_name,
                    report.inserted,
                    report.failed
                );
                if !report.complete {
                    print!(" incomplete");
                }
                if let Some(s) = &report.salvage {
                    print!(" recovered={} bytes_skipped={}", s.records_recovered, s.bytes_skipped);
                }
                println!();
            }
            // Whatever was committed stays committed, as in the database.
            db.save(&cfg.dsn).with_context(|| format!("saving {}", cfg.dsn))?;
            Ok(ok)
        }
        Command::Inspect { file } => {
            let (h, rows) = read_strict(BufReader::new(open(&file)?)).with_context(|| file.display().to_string())?;
            println!(
                "table={} chunk={} columns={} records={}",
                h.table_name,
                h.chunk_index,
                h.column_count,
                rows.len()
            );
            println!("insert_sql={}", h.insert_sql);
            Ok(true)
        }
        Command::Verify { files } => {
            let mut ok = true;
            for f in &files {
                let res = open(f).and_then(|src| Ok(read_strict(BufReader::new(src))?));
                match res {
                    Ok((_, rows)) => println!("OK   {} records={}", f.display(), rows.len()),
                    Err(e) => {
                        ok = false;
                        println!("FAIL {}: {e:#}", f.display());
                    }
                }
            }
            Ok(ok)
        }
        Command::Salvage { file, out } => {
            let s = read_salvage(BufReader::new(open(&file)?))?;
            print_salvage(&s.report);
            match s.header {
                Some(h) => {
                    let sink = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
                    let n = write_dump_file(sink, &h, &s.rows)?;
                    println!("wrote {} records to {}", n, out.display());
                    if n == 0 {
                        eprintln!("warning: no records recovered");
                    }
                }
                None => eprintln!("warning: no header recovered and no records written; {} not created", out.display()),
            }
            Ok(true)
        }
        Command::Corrupt {
            file,
            out,
            acknowledged: _,
            offsets,
            values,
            seed,
            count,
        } => corrupt(&file, &out, &offsets, &values, seed, count),
        Command::Bench {
            rows,
            chunk_size,
            jobs,
            commit,
            out,
            seed,
            commit_latency_us,
        } => {
            let (dir, temporary) = match out {
                Some(d) => (d, false),
                None => (std::env::temp_dir().join(format!("tabledump-bench-{}", std::process::id())), true),
            };
            fs::create_dir_all(&dir)?;
            let mut loads = vec![(CommitPolicy::PerRecord, 1), (CommitPolicy::PerBatch(1000), 1)];
            for pair in [(commit, 1), (commit, jobs as usize)] {
                if !loads.contains(&pair) {
                    loads.push(pair);
                }
            }
            let cfg = BenchConfig {
                rows,
                chunk: ChunkPolicy::new(chunk_size).expect("range checked"),
                work_dir: dir.clone(),
                loads,
                seed,
                commit_latency: std::time::Duration::from_micros(commit_latency_us),
            };
            println!("commit latency {commit_latency_us}us per commit");
            let result = bench::run(&cfg);
            if temporary {
                let _ = fs::remove_dir_all(&dir);
            } else {
                bench::clean_work_dir(&dir)?;
            }
            print!("{}", result?);
            Ok(true)
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn print_salvage(r: &SalvageReport) {
    println!("records_recovered={}", r.records_recovered);
    println!("bytes_skipped={}", r.bytes_skipped);
    println!("header_found={}", r.header_found);
    println!("end_frame_found={}", r.end_frame_found);
    match r.expected_records {
        Some(n) => println!("expected_records={n}"),
        None => println!("expected_records=unknown"),
    }
    println!("crc_rejections={}", r.crc_rejections);
}

fn corrupt(file: &Path, out: &Path, offsets: &[u64], values: &[u8], seed: Option<u64>, count: u32) -> Result<bool> {
    let mut bytes = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    if out.exists() && fs::canonicalize(out)? == fs::canonicalize(file)? {
        return Err(usage("output must differ from the input; corrupt only writes copies"));
    }
    if !values.is_empty() && values.len() != offsets.len() {
        return Err(usage("give one --value per --offset, or none"));
    }
    let mut edits: Vec<(usize, Option<u8>)> = Vec::new();
    match seed {
        Some(seed) => {
            if bytes.is_empty() {
                return Err(usage("cannot corrupt an empty file"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let at = rng.gen_range(0..bytes.len());
                let mask: u8 = rng.gen_range(1..=255);
                edits.push((at, Some(bytes[at] ^ mask)));
            }
        }
        None => {
            if offsets.is_empty() {
                return Err(usage("give --offset or --seed"));
            }
            for (i, &off) in offsets.iter().enumerate() {
                let at = usize::try_from(off).ok().filter(|&a| a < bytes.len()).ok_or_else(|| {
                    usage(format!("offset {off} is beyond the end of {} ({} bytes)", file.display(), bytes.len()))
                })?;
                edits.push((at, values.get(i).copied()));
            }
        }
    }
    for (at, value) in edits {
        let new = value.unwrap_or(!bytes[at]);
        println!("offset {at}: {:#04x} -> {new:#04x}", bytes[at]);
        bytes[at] = new;
    }
    fs::write(out, &bytes).with_context(|| format!("writing {}", out.display()))?;
    Ok(true)
}
