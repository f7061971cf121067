#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tabledump::backend::MemoryDatabase;
use tabledump::{Row, TableSpec, Value};

pub const CROSS_RATE_SQL: &str = include_str!("../fixtures/cross_rate.sql");
pub const CROSS_RATE_PLAN: &str = include_str!("../fixtures/cross_rate.plan");

pub const SELECT: &str = "select from_currency, to_currency, conv_rate, cast(update_date as char(24)) from cross_rate";
pub const INSERT: &str =
    "insert into cross_rate (from_currency, to_currency, conv_rate, update_date) values (?, ?, ?, ?)";

pub const DATE_TEXT: &str = "1993-11-22 00:00:00.0000";

/// The 13 rows as a dump of the example table must contain them, floats as
/// single-precision values widened to double. The Yen/Pound rate is the exact
/// widening of 0.00625f32. Some literals carry 17 significant digits.
#[allow(clippy::excessive_precision)]
pub const GOLDEN: [(&str, &str, f64); 13] = [
    ("Dollar", "CdnDlr", 1.327299952507019),
    ("Dollar", "FFranc", 5.9193000793457031),
    ("Dollar", "D-Mark", 1.7037999629974365),
    ("Dollar", "Lira", 1680.0),
    ("Dollar", "Yen", 108.43000030517578),
    ("Dollar", "Guilder", 1.9114999771118164),
    ("Dollar", "SFranc", 1.4945000410079956),
    ("Dollar", "Pound", 0.67773997783660889),
    ("Pound", "FFranc", 8.7340002059936523),
    ("Pound", "Yen", 159.99000549316406),
    ("Yen", "Pound", 0.0062500000931322575),
    ("CdnDlr", "Dollar", 0.7534099817276001),
    ("CdnDlr", "FFranc", 4.4597001075744629),
];

pub fn golden_rows() -> Vec<Row> {
    GOLDEN
        .iter()
        .map(|&(from, to, rate)| Row(vec![from.into(), to.into(), Value::Float(rate), DATE_TEXT.into()]))
        .collect()
}

pub fn cross_rate_db() -> MemoryDatabase {
    MemoryDatabase::from_script(CROSS_RATE_SQL).expect("example script runs")
}

pub fn cross_rate_spec() -> TableSpec {
    TableSpec::new("cross_rate", SELECT, INSERT).unwrap()
}

/// Rows sorted by their debug rendering, for multiset comparison.
pub fn sorted(mut rows: Vec<Row>) -> Vec<Row> {
    rows.sort_by_cached_key(|r| format!("{r:?}"));
    rows
}

pub fn chunk_paths(dir: &Path, table: &str) -> Vec<PathBuf> {
    tabledump::dump::existing_chunks(dir, table)
        .unwrap()
        .into_iter()
        .map(|(_, p)| p)
        .collect()
}
