mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::*;
use tabledump::backend::MemoryDatabase;
use tabledump::{read_strict, Row};

fn td(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabledump"))
        .args(args)
        .env_remove("TD_DSN")
        .env_remove("TD_USER")
        .env_remove("TD_PASSWORD")
        .output()
        .expect("run tabledump")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(f.path("cross_rate.sql"), CROSS_RATE_SQL).unwrap();
        fs::write(f.path("plan.txt"), CROSS_RATE_PLAN).unwrap();
        fs::write(f.path("schema.sql"), CROSS_RATE_SQL.split("INSERT").next().unwrap()).unwrap();
        let o = td(&["init", "--dsn", s(&f.path("src.json")), s(&f.path("cross_rate.sql"))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = td(&["init", "--dsn", s(&f.path("dst.json")), s(&f.path("schema.sql"))]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn dump(&self, extra: &[&str]) -> Output {
        let (out, src, plan) = (self.path("out"), self.path("src.json"), self.path("plan.txt"));
        let mut args = vec!["dump", "--dsn", s(&src), "--plan", s(&plan), "--out", s(&out)];
        args.extend(extra);
        td(&args)
    }

    fn dump_file(&self) -> PathBuf {
        self.path("out").join("cross_rate.1.dump")
    }

    fn dst_rows(&self) -> usize {
        MemoryDatabase::open(self.path("dst.json")).unwrap().row_count("cross_rate").unwrap()
    }
}

#[test]
fn dump_prints_progress_and_summary() {
    let f = Fixture::new();
    let o = f.dump(&[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "Dumping table: cross_rate");
    assert_eq!(lines[1], "13 records dumped into cross_rate.1.dump file");
    assert_eq!(lines[2], "Total number of records in cross_rate table: 13");
    assert_eq!(lines[3], "Dumping cross_rate table successful.");
    assert_eq!(lines[4], format!("file={} records=13", f.dump_file().display()));
    let (_, rows) = read_strict(fs::File::open(f.dump_file()).unwrap()).unwrap();
    assert_eq!(rows, golden_rows());
}

#[test]
fn dump_chunks_and_refuses_existing_files() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&["--chunk-size", "5"])), 0);
    assert_eq!(chunk_paths(&f.path("out"), "cross_rate").len(), 3);

    let o = f.dump(&[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("cross_rate"), "{}", stderr(&o));
    assert!(stderr(&o).contains("already exists"));

    let o = f.dump(&["--overwrite"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(chunk_paths(&f.path("out"), "cross_rate").len(), 1);
}

#[test]
fn dump_usage_errors() {
    let f = Fixture::new();
    fs::write(f.path("plan.txt"), "table: cross_rate\nselect: select * from cross_rate\n").unwrap();
    let o = f.dump(&[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));

    fs::remove_file(f.path("plan.txt")).unwrap();
    assert_eq!(code(&f.dump(&[])), 2);
    assert_eq!(code(&f.dump(&["--chunk-size", "0"])), 2);
}

#[test]
fn dump_of_raw_date_names_the_column() {
    let f = Fixture::new();
    fs::write(
        f.path("plan.txt"),
        CROSS_RATE_PLAN.replace("cast(update_date as char(24))", "update_date"),
    )
    .unwrap();
    let o = f.dump(&[]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("update_date") && err.contains("date"), "{err}");
}

#[test]
fn load_with_flags_and_positional_forms() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let dump = f.dump_file();

    let o = td(&["load", "--dsn", s(&f.path("dst.json")), "-u", "SYSDBA", "-p", "masterkey", s(&dump)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains(&format!("{} file loaded successful.", dump.display())));
    assert!(stdout(&o).contains("inserted=13 failed=0"));
    assert_eq!(f.dst_rows(), 13);

    // Loading again collides with every primary key.
    let o = td(&["load", s(&f.path("dst.json")), "SYSDBA", "masterkey", s(&dump)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("Unable to load record: 1"));
    assert!(stdout(&o).contains("inserted=0 failed=13"));
    assert_eq!(f.dst_rows(), 13);
}

#[test]
fn load_reports_single_duplicate() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let db = MemoryDatabase::open(f.path("dst.json")).unwrap();
    db.execute_script("INSERT INTO cross_rate VALUES ('Yen', 'Pound', 1.0, '1/1/94');").unwrap();
    db.save(f.path("dst.json")).unwrap();

    for commit in ["record", "batch:4", "file"] {
        let dst = f.path(&format!("dst-{commit}.json").replace(':', "_"));
        fs::copy(f.path("dst.json"), &dst).unwrap();
        let o = td(&["load", "--dsn", s(&dst), "--commit", commit, s(&f.dump_file())]);
        assert_eq!(code(&o), 1, "{commit}");
        assert!(stdout(&o).contains("inserted=12 failed=1"), "{commit}: {}", stdout(&o));
        assert!(stdout(&o).contains("Unable to load record: 11"));
    }
}

#[test]
fn load_usage_errors() {
    let f = Fixture::new();
    assert_eq!(code(&td(&["load"])), 2);
    let o = td(&["load", "db", "user", "pw"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(code(&td(&["load", "--dsn", s(&f.path("dst.json"))])), 2);
    assert_eq!(code(&td(&["load", "--dsn", s(&f.path("dst.json")), "--commit", "batch:0", "x"])), 2);
    assert_eq!(code(&td(&["load", "--dsn", s(&f.path("dst.json")), "--jobs", "0", "x"])), 2);
}

#[test]
fn dsn_from_environment() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let o = Command::new(env!("CARGO_BIN_EXE_tabledump"))
        .args(["load", s(&f.dump_file())])
        .env("TD_DSN", f.path("dst.json"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(f.dst_rows(), 13);
}

#[test]
fn inspect_and_verify() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&["--chunk-size", "5"])), 0);
    let o = td(&["inspect", s(&f.path("out").join("cross_rate.1.dump"))]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("table=cross_rate chunk=1 columns=4 records=5"));
    assert!(out.contains(&format!("insert_sql={INSERT}")));

    let files = chunk_paths(&f.path("out"), "cross_rate");
    let mut args = vec!["verify"];
    args.extend(files.iter().map(|p| s(p)));
    assert_eq!(code(&td(&args)), 0);

    let bad = f.path("bad.dump");
    let o = td(&["corrupt", s(&files[1]), s(&bad), "--i-know-this-destroys-data", "--offset", "40"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut args = vec!["verify", s(&files[0]), s(&bad), s(&files[2])];
    let o = td(&args);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.lines().nth(1).unwrap().starts_with(&format!("FAIL {}", bad.display())), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("OK")).count(), 2);

    args.truncate(1);
    assert_eq!(code(&td(&args)), 2);
}

#[test]
fn inspect_rejects_damage() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let bytes = fs::read(f.dump_file()).unwrap();
    fs::write(f.path("short.dump"), &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(code(&td(&["inspect", s(&f.path("short.dump"))])), 1);
    fs::write(f.path("text.dump"), "not a dump file at all").unwrap();
    let o = td(&["inspect", s(&f.path("text.dump"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn corrupt_salvage_load_pipeline() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let bad = f.path("bad.dump");
    let fixed = f.path("fixed.dump");
    // Inside the payload of the third record frame.
    let o = td(&["corrupt", s(&f.dump_file()), s(&bad), "--i-know-this-destroys-data", "--offset", "200", "--value", "0x00"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&td(&["inspect", s(&bad)])), 1);

    let o = td(&["salvage", s(&bad), s(&fixed)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("records_recovered=12"), "{}", stdout(&o));
    assert!(stdout(&o).contains("expected_records=13"));
    let (_, rows) = read_strict(fs::File::open(&fixed).unwrap()).unwrap();
    assert_eq!(rows.len(), 12);

    let o = td(&["load", "--dsn", s(&f.path("dst.json")), s(&fixed)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(f.dst_rows(), 12);
}

#[test]
fn salvage_mode_load_of_damaged_file() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let bad = f.path("bad.dump");
    assert_eq!(code(&td(&["corrupt", s(&f.dump_file()), s(&bad), "--i-know-this-destroys-data", "--offset", "200"])), 0);
    let o = td(&["load", "--dsn", s(&f.path("dst.json")), s(&bad)]);
    assert_eq!(code(&o), 1);
    assert_eq!(f.dst_rows(), 0);
    let o = td(&["load", "--dsn", s(&f.path("dst.json")), "--mode", "salvage", s(&bad)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("inserted=12 failed=0 recovered=12"), "{}", stdout(&o));
    assert_eq!(f.dst_rows(), 12);
}

#[test]
fn salvage_clean_and_garbage() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let o = td(&["salvage", s(&f.dump_file()), s(&f.path("copy.dump"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("bytes_skipped=0"));
    assert_eq!(fs::read(f.path("copy.dump")).unwrap(), fs::read(f.dump_file()).unwrap());

    fs::write(f.path("noise"), (0..4096u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect::<Vec<_>>()).unwrap();
    let o = td(&["salvage", s(&f.path("noise")), s(&f.path("noise.dump"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("records_recovered=0"));
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn corrupt_contract() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&[])), 0);
    let src = f.dump_file();
    let original = fs::read(&src).unwrap();

    // Acknowledgment is mandatory.
    assert_eq!(code(&td(&["corrupt", s(&src), s(&f.path("x")), "--offset", "1"])), 2);
    let ack = "--i-know-this-destroys-data";
    let beyond = original.len().to_string();
    assert_eq!(code(&td(&["corrupt", s(&src), s(&f.path("x")), ack, "--offset", &beyond])), 2);
    assert_eq!(code(&td(&["corrupt", s(&src), s(&src), ack, "--offset", "1"])), 2);
    assert_eq!(fs::read(&src).unwrap(), original);

    let run = |out: &str, seed: &str| {
        let o = td(&["corrupt", s(&src), s(&f.path(out)), ack, "--seed", seed, "--count", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(f.path(out)).unwrap()
    };
    let a = run("a", "42");
    let b = run("b", "42");
    let c = run("c", "43");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_ne!(a, original);
    assert_eq!(a.len(), original.len());
    assert_eq!(fs::read(&src).unwrap(), original);
}

#[test]
fn parallel_load_from_cli() {
    let f = Fixture::new();
    assert_eq!(code(&f.dump(&["--chunk-size", "2"])), 0);
    let files = chunk_paths(&f.path("out"), "cross_rate");
    assert_eq!(files.len(), 7);
    let dst = f.path("dst.json");
    let mut args = vec!["load", "--dsn", s(&dst), "--jobs", "3", "--commit", "batch:2"];
    args.extend(files.iter().map(|p| s(p)));
    let o = td(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let db = MemoryDatabase::open(&dst).unwrap();
    let rows: Vec<Row> = {
        use tabledump::backend::Connector;
        let mut c = db.connect();
        c.query(SELECT).unwrap().collect::<Result<_, _>>().unwrap()
    };
    assert_eq!(sorted(rows), sorted(golden_rows()));
}

#[test]
fn bench_small_and_empty() {
    let o = td(&["bench", "--rows", "3000", "--chunk-size", "1000", "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("dump  rows=3000 files=3"), "{out}");
    assert!(out.contains("commit=record jobs=1"));
    assert!(out.contains("commit=batch:1000 jobs=2"));
    assert!(out.lines().skip(1).all(|l| l.ends_with("records/minute")));

    let o = td(&["bench", "--rows", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with("n/a")), "{}", stdout(&o));
}
