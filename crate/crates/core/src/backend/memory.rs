//! In-memory reference database.
//!
//! Implements just enough SQL for the engines and their tests: full-scan
//! selects with optional `cast(col as char(n))`, positional inserts,
//! transactions with rollback, NOT NULL and primary-key enforcement, and
//! CREATE TABLE / INSERT schema scripts. Many connections may share one
//! database; commits are serialized by a global lock.
//!
//! Databases can be saved to and opened from a JSON snapshot, which is what
//! the command-line tool uses as its DSN.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use super::sql::{self, CastTarget, Literal, Operand, SelectItem, Statement};
use super::{map_cell, BackendError, Connector, NativeCell, RowStream};
use crate::model::{Row, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnType {
    Integer,
    Int128,
    /// Single precision.
    Float,
    Double,
    Char(u32),
    Varchar(u32),
    Octets,
    Date,
    Time,
    Timestamp,
    /// Fixed-point with the given scale.
    Decimal(u8),
    Blob,
}

impl std::fmt::Display for ColumnType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnType::Integer => f.write_str("INTEGER"),
            ColumnType::Int128 => f.write_str("INT128"),
            ColumnType::Float => f.write_str("FLOAT"),
            ColumnType::Double => f.write_str("DOUBLE PRECISION"),
            ColumnType::Char(n) => write!(f, "CHAR({n})"),
            ColumnType::Varchar(n) => write!(f, "VARCHAR({n})"),
            ColumnType::Octets => f.write_str("VARBINARY"),
            ColumnType::Date => f.write_str("DATE"),
            ColumnType::Time => f.write_str("TIME"),
            ColumnType::Timestamp => f.write_str("TIMESTAMP"),
            ColumnType::Decimal(s) => write!(f, "DECIMAL(18, {s})"),
            ColumnType::Blob => f.write_str("BLOB"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub ty: ColumnType,
    pub not_null: bool,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        ColumnDef {
            name: name.into().to_lowercase(),
            ty,
            not_null: false,
        }
    }

    pub fn not_null(mut self) -> Self {
        self.not_null = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct TableSchema {
    name: String,
    columns: Vec<ColumnDef>,
    primary_key: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    name: String,
    columns: Vec<ColumnDef>,
    primary_key: Vec<String>,
}

impl TryFrom<RawSchema> for TableSchema {
    type Error = BackendError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        TableSchema::new(raw.name, raw.columns, raw.primary_key)
    }
}

impl From<TableSchema> for RawSchema {
    fn from(s: TableSchema) -> Self {
        RawSchema {
            primary_key: s.primary_key.iter().map(|&i| s.columns[i].name.clone()).collect(),
            name: s.name,
            columns: s.columns,
        }
    }
}

impl TableSchema {
    /// Names are case-insensitive and stored lowercased. Primary-key columns
    /// are implicitly NOT NULL.
    pub fn new(
        name: impl Into<String>,
        mut columns: Vec<ColumnDef>,
        primary_key: Vec<String>,
    ) -> Result<Self, BackendError> {
        let name = name.into().to_lowercase();
        if columns.is_empty() {
            return Err(BackendError::Syntax(format!("table {name} has no columns")));
        }
        let mut seen = HashSet::new();
        for c in &mut columns {
            c.name = c.name.to_lowercase();
            if !seen.insert(c.name.clone()) {
                return Err(BackendError::Syntax(format!("duplicate column {} in table {name}", c.name)));
            }
        }
        let mut pk = Vec::with_capacity(primary_key.len());
        for k in primary_key {
            let k = k.to_lowercase();
            let idx = columns
                .iter()
                .position(|c| c.name == k)
                .ok_or_else(|| BackendError::UnknownColumn {
                    table: name.clone(),
                    column: k.clone(),
                })?;
            if pk.contains(&idx) {
                return Err(BackendError::Syntax(format!("column {k} repeated in primary key")));
            }
            columns[idx].not_null = true;
            pk.push(idx);
        }
        Ok(TableSchema {
            name,
            columns,
            primary_key: pk,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn columns(&self) -> &[ColumnDef] {
        &self.columns
    }

    fn column_index(&self, name: &str) -> Result<usize, BackendError> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| BackendError::UnknownColumn {
                table: self.name.clone(),
                column: name.to_owned(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum KeyPart {
    Null,
    Int(i128),
    Bits(u64),
    Text(String),
    Octets(Vec<u8>),
    Date(NaiveDate),
    Time(NaiveTime),
    Timestamp(NaiveDateTime),
    Decimal(i64, u8),
    Blob(u64),
}

type Key = Vec<KeyPart>;

fn key_part(cell: &NativeCell) -> KeyPart {
    match cell {
        NativeCell::Null => KeyPart::Null,
        NativeCell::Integer(v) => KeyPart::Int(i128::from(*v)),
        NativeCell::Int128(v) => KeyPart::Int(*v),
        NativeCell::Float(v) => KeyPart::Bits(u64::from(v.to_bits())),
        NativeCell::Double(v) => KeyPart::Bits(v.to_bits()),
        NativeCell::Char(s) => KeyPart::Text(s.clone()),
        NativeCell::Octets(b) => KeyPart::Octets(b.clone()),
        NativeCell::Date(d) => KeyPart::Date(*d),
        NativeCell::Time(t) => KeyPart::Time(*t),
        NativeCell::Timestamp(t) => KeyPart::Timestamp(*t),
        NativeCell::Decimal { units, scale } => KeyPart::Decimal(*units, *scale),
        NativeCell::Blob(h) => KeyPart::Blob(*h),
    }
}

#[derive(Default)]
struct TableData {
    rows: Vec<Vec<NativeCell>>,
    keys: HashSet<Key>,
}

struct Table {
    schema: TableSchema,
    data: RwLock<TableData>,
}

impl Table {
    fn key_of(&self, cells: &[NativeCell]) -> Option<Key> {
        if self.schema.primary_key.is_empty() {
            return None;
        }
        Some(self.schema.primary_key.iter().map(|&i| key_part(&cells[i])).collect())
    }

    fn describe_key(&self, cells: &[NativeCell]) -> String {
        let mut s = String::from("(");
        for (n, &i) in self.schema.primary_key.iter().enumerate() {
            if n > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{}={}", self.schema.columns[i].name, render_cell(&cells[i]));
        }
        s.push(')');
        s
    }
}

fn render_cell(cell: &NativeCell) -> String {
    match cell {
        NativeCell::Null => "NULL".into(),
        NativeCell::Char(s) => format!("'{s}'"),
        other => cell_to_text(other).unwrap_or_else(|| format!("<{}>", other.type_name())),
    }
}

struct Shared {
    tables: RwLock<BTreeMap<String, Arc<Table>>>,
    dialect: Mutex<u8>,
    commit_lock: Mutex<()>,
    commit_latency_ns: AtomicU64,
}

/// Shared handle to one in-memory database. Cloning is cheap; clones see the
/// same tables.
#[derive(Clone)]
pub struct MemoryDatabase {
    shared: Arc<Shared>,
}

impl Default for MemoryDatabase {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    dialect: u8,
    tables: Vec<TableSnapshot>,
}

#[derive(Serialize, Deserialize)]
struct TableSnapshot {
    schema: TableSchema,
    rows: Vec<Vec<NativeCell>>,
}

impl MemoryDatabase {
    pub fn new() -> Self {
        MemoryDatabase {
            shared: Arc::new(Shared {
                tables: RwLock::new(BTreeMap::new()),
                dialect: Mutex::new(3),
                commit_lock: Mutex::new(()),
                commit_latency_ns: AtomicU64::new(0),
            }),
        }
    }

    /// Creates a database and runs a schema script (CREATE TABLE, INSERT,
    /// `SET SQL DIALECT`; `CREATE DATABASE`/`COMMIT` are accepted and ignored).
    pub fn from_script(script: &str) -> Result<Self, BackendError> {
        let db = Self::new();
        db.execute_script(script)?;
        Ok(db)
    }

    pub fn execute_script(&self, script: &str) -> Result<(), BackendError> {
        let dialect = *self.shared.dialect.lock().expect("dialect lock");
        let statements = sql::parse_script(script, dialect)?;
        let mut conn = self.connect();
        for stmt in statements {
            match stmt {
                Statement::SetDialect(d) => *self.shared.dialect.lock().expect("dialect lock") = d,
                Statement::Ignored => {}
                Statement::CreateTable(schema) => self.create_table(schema)?,
                Statement::Insert(ins) => {
                    let prepared = conn.prepare(ins)?;
                    conn.insert_prepared(&prepared, &[])?;
                    conn.commit()?;
                }
                Statement::Select(_) => {
                    return Err(BackendError::Syntax("SELECT is not allowed in a schema script".into()))
                }
            }
        }
        Ok(())
    }

    pub fn create_table(&self, schema: TableSchema) -> Result<(), BackendError> {
        let mut tables = self.shared.tables.write().expect("catalog lock");
        if tables.contains_key(schema.name()) {
            return Err(BackendError::TableExists(schema.name().to_owned()));
        }
        tables.insert(
            schema.name().to_owned(),
            Arc::new(Table {
                schema,
                data: RwLock::new(TableData::default()),
            }),
        );
        Ok(())
    }

    /// A fresh database with the same tables and no rows.
    pub fn empty_clone(&self) -> Self {
        let db = Self::new();
        *db.shared.dialect.lock().expect("dialect lock") = *self.shared.dialect.lock().expect("dialect lock");
        for t in self.shared.tables.read().expect("catalog lock").values() {
            db.create_table(t.schema.clone()).expect("names unique in source");
        }
        db.set_commit_latency(self.commit_latency());
        db
    }

    fn table(&self, name: &str) -> Result<Arc<Table>, BackendError> {
        self.shared
            .tables
            .read()
            .expect("catalog lock")
            .get(name)
            .cloned()
            .ok_or_else(|| BackendError::UnknownTable(name.to_owned()))
    }

    pub fn table_names(&self) -> Vec<String> {
        self.shared.tables.read().expect("catalog lock").keys().cloned().collect()
    }

    pub fn schema(&self, table: &str) -> Result<TableSchema, BackendError> {
        Ok(self.table(&table.to_lowercase())?.schema.clone())
    }

    pub fn row_count(&self, table: &str) -> Result<usize, BackendError> {
        Ok(self.table(&table.to_lowercase())?.data.read().expect("table lock").rows.len())
    }

    /// Committed rows as stored, in insertion order.
    pub fn scan_native(&self, table: &str) -> Result<Vec<Vec<NativeCell>>, BackendError> {
        Ok(self.table(&table.to_lowercase())?.data.read().expect("table lock").rows.clone())
    }

    /// Appends already-typed cells, bypassing SQL; constraints still apply.
    pub fn insert_native(&self, table: &str, cells: Vec<NativeCell>) -> Result<(), BackendError> {
        let t = self.table(&table.to_lowercase())?;
        if cells.len() != t.schema.columns.len() {
            return Err(BackendError::ParameterCount {
                placeholders: t.schema.columns.len(),
                params: cells.len(),
            });
        }
        for (cell, col) in cells.iter().zip(&t.schema.columns) {
            if col.not_null && *cell == NativeCell::Null {
                return Err(BackendError::NotNull {
                    table: t.schema.name.clone(),
                    column: col.name.clone(),
                });
            }
        }
        let _guard = self.shared.commit_lock.lock().expect("commit lock");
        let mut data = t.data.write().expect("table lock");
        if let Some(key) = t.key_of(&cells) {
            if !data.keys.insert(key) {
                return Err(BackendError::DuplicateKey {
                    table: t.schema.name.clone(),
                    key: t.describe_key(&cells),
                });
            }
        }
        data.rows.push(cells);
        Ok(())
    }

    /// Fixed cost added to every commit, standing in for the round trip and
    /// log flush a server pays. Zero by default. It is spent outside the
    /// commit lock, so concurrent connections overlap it.
    pub fn set_commit_latency(&self, latency: Duration) {
        let ns = u64::try_from(latency.as_nanos()).unwrap_or(u64::MAX);
        self.shared.commit_latency_ns.store(ns, Ordering::Relaxed);
    }

    pub fn commit_latency(&self) -> Duration {
        Duration::from_nanos(self.shared.commit_latency_ns.load(Ordering::Relaxed))
    }

    pub fn connect(&self) -> MemoryConnection {
        MemoryConnection {
            db: self.clone(),
            pending: Vec::new(),
            pending_keys: HashSet::new(),
            prepared: HashMap::new(),
            fail_after_inserts: None,
            inserts: 0,
            closed: false,
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let open_err = |reason: String| BackendError::Open {
            dsn: path.display().to_string(),
            reason,
        };
        let file = std::fs::File::open(path).map_err(|e| open_err(e.to_string()))?;
        let snap: Snapshot =
            serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| open_err(e.to_string()))?;
        let db = Self::new();
        *db.shared.dialect.lock().expect("dialect lock") = snap.dialect;
        for t in snap.tables {
            let name = t.schema.name().to_owned();
            db.create_table(t.schema).map_err(|e| open_err(e.to_string()))?;
            for row in t.rows {
                db.insert_native(&name, row).map_err(|e| open_err(e.to_string()))?;
            }
        }
        Ok(db)
    }

    /// Writes a JSON snapshot of all committed data, atomically replacing
    /// `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        let snap = {
            let _guard = self.shared.commit_lock.lock().expect("commit lock");
            Snapshot {
                dialect: *self.shared.dialect.lock().expect("dialect lock"),
                tables: self
                    .shared
                    .tables
                    .read()
                    .expect("catalog lock")
                    .values()
                    .map(|t| TableSnapshot {
                        schema: t.schema.clone(),
                        rows: t.data.read().expect("table lock").rows.clone(),
                    })
                    .collect(),
            }
        };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let f = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            serde_json::to_writer(&mut w, &snap)?;
            std::io::Write::flush(&mut w)?;
        }
        std::fs::rename(tmp, path)
    }
}

struct PreparedInsert {
    table: Arc<Table>,
    /// Target column for each operand.
    targets: Vec<usize>,
    values: Vec<Operand>,
    placeholders: usize,
}

/// A connection to a [`MemoryDatabase`]. Uncommitted inserts are private to
/// the connection and discarded on rollback or drop.
pub struct MemoryConnection {
    db: MemoryDatabase,
    pending: Vec<(Arc<Table>, Vec<NativeCell>)>,
    pending_keys: HashSet<(String, Key)>,
    prepared: HashMap<String, Arc<PreparedInsert>>,
    fail_after_inserts: Option<u64>,
    inserts: u64,
    closed: bool,
}

impl MemoryConnection {
    /// Simulates a dropped connection: after `n` more successful inserts,
    /// every call fails with `ConnectionLost` and uncommitted work is lost.
    pub fn fail_after_inserts(&mut self, n: u64) {
        self.fail_after_inserts = Some(self.inserts + n);
    }

    pub fn database(&self) -> &MemoryDatabase {
        &self.db
    }

    fn check_alive(&mut self) -> Result<(), BackendError> {
        if self.closed {
            return Err(BackendError::ConnectionLost("connection is closed".into()));
        }
        if self.fail_after_inserts.is_some_and(|n| self.inserts >= n) {
            self.pending.clear();
            self.pending_keys.clear();
            return Err(BackendError::ConnectionLost("server closed the connection".into()));
        }
        Ok(())
    }

    fn prepare(&self, ins: sql::Insert) -> Result<PreparedInsert, BackendError> {
        let table = self.db.table(&ins.table)?;
        let targets = match &ins.columns {
            Some(cols) => {
                let mut seen = HashSet::new();
                cols.iter()
                    .map(|c| {
                        let i = table.schema.column_index(c)?;
                        if !seen.insert(i) {
                            return Err(BackendError::Syntax(format!("column {c} listed twice")));
                        }
                        Ok(i)
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => {
                if ins.values.len() != table.schema.columns.len() {
                    return Err(BackendError::Syntax(format!(
                        "table {} has {} columns but {} values were given",
                        table.schema.name,
                        table.schema.columns.len(),
                        ins.values.len()
                    )));
                }
                (0..ins.values.len()).collect()
            }
        };
        Ok(PreparedInsert {
            placeholders: ins.placeholders(),
            table,
            targets,
            values: ins.values,
        })
    }

    fn prepared(&mut self, sql_text: &str) -> Result<Arc<PreparedInsert>, BackendError> {
        if let Some(p) = self.prepared.get(sql_text) {
            return Ok(p.clone());
        }
        let dialect = *self.db.shared.dialect.lock().expect("dialect lock");
        let ins = match sql::parse_statement(sql_text, dialect)? {
            Statement::Insert(ins) => ins,
            _ => return Err(BackendError::Syntax("expected an INSERT statement".into())),
        };
        let p = Arc::new(self.prepare(ins)?);
        self.prepared.insert(sql_text.to_owned(), p.clone());
        Ok(p)
    }

    fn insert_prepared(&mut self, p: &PreparedInsert, params: &[Value]) -> Result<(), BackendError> {
        if params.len() != p.placeholders {
            return Err(BackendError::ParameterCount {
                placeholders: p.placeholders,
                params: params.len(),
            });
        }
        let schema = &p.table.schema;
        let mut cells = vec![NativeCell::Null; schema.columns.len()];
        let mut next_param = params.iter();
        for (operand, &target) in p.values.iter().zip(&p.targets) {
            let value = match operand {
                Operand::Param => next_param.next().expect("count checked").clone(),
                Operand::Literal(l) => literal_value(l),
            };
            cells[target] = coerce(&value, schema, target)?;
        }
        for (cell, col) in cells.iter().zip(&schema.columns) {
            if col.not_null && *cell == NativeCell::Null {
                return Err(BackendError::NotNull {
                    table: schema.name.clone(),
                    column: col.name.clone(),
                });
            }
        }
        if let Some(key) = p.table.key_of(&cells) {
            let dup = p.table.data.read().expect("table lock").keys.contains(&key)
                || self.pending_keys.contains(&(schema.name.clone(), key.clone()));
            if dup {
                return Err(BackendError::DuplicateKey {
                    table: schema.name.clone(),
                    key: p.table.describe_key(&cells),
                });
            }
            self.pending_keys.insert((schema.name.clone(), key));
        }
        self.pending.push((p.table.clone(), cells));
        self.inserts += 1;
        Ok(())
    }
}

fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Null => Value::Null,
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(*f),
        Literal::Text(s) => Value::Text(s.clone()),
    }
}

fn coerce(value: &Value, schema: &TableSchema, idx: usize) -> Result<NativeCell, BackendError> {
    let col = &schema.columns[idx];
    let mismatch = || BackendError::TypeMismatch {
        table: schema.name.clone(),
        column: col.name.clone(),
        expected: col.ty.to_string(),
        found: format!("{value:?}"),
    };
    let too_long = |limit: u32| BackendError::Truncation {
        table: schema.name.clone(),
        column: col.name.clone(),
        limit,
    };
    if value.is_null() {
        return Ok(NativeCell::Null);
    }
    let cell = match (&col.ty, value) {
        (ColumnType::Integer, Value::Int(i)) => NativeCell::Integer(*i),
        (ColumnType::Integer, Value::Text(s)) => NativeCell::Integer(s.trim().parse().map_err(|_| mismatch())?),
        (ColumnType::Int128, Value::Int(i)) => NativeCell::Int128(i128::from(*i)),
        (ColumnType::Int128, Value::Text(s)) => NativeCell::Int128(s.trim().parse().map_err(|_| mismatch())?),
        (ColumnType::Float, Value::Float(f)) => NativeCell::Float(*f as f32),
        (ColumnType::Float, Value::Int(i)) => NativeCell::Float(*i as f32),
        (ColumnType::Double, Value::Float(f)) => NativeCell::Double(*f),
        (ColumnType::Double, Value::Int(i)) => NativeCell::Double(*i as f64),
        (ColumnType::Char(n), Value::Text(s)) => {
            let len = s.chars().count();
            if len > *n as usize {
                return Err(too_long(*n));
            }
            let mut padded = s.clone();
            padded.extend(std::iter::repeat_n(' ', *n as usize - len));
            NativeCell::Char(padded)
        }
        (ColumnType::Varchar(n), Value::Text(s)) => {
            if s.chars().count() > *n as usize {
                return Err(too_long(*n));
            }
            NativeCell::Char(s.clone())
        }
        (ColumnType::Octets, Value::Bytes(b)) => NativeCell::Octets(b.clone()),
        (ColumnType::Date, Value::Text(s)) => NativeCell::Date(parse_temporal(s).ok_or_else(mismatch)?.date()),
        (ColumnType::Timestamp, Value::Text(s)) => NativeCell::Timestamp(parse_temporal(s).ok_or_else(mismatch)?),
        (ColumnType::Time, Value::Text(s)) => NativeCell::Time(parse_time(s).ok_or_else(mismatch)?),
        (ColumnType::Decimal(scale), Value::Int(i)) => NativeCell::Decimal {
            units: i.checked_mul(10i64.pow(u32::from(*scale))).ok_or_else(mismatch)?,
            scale: *scale,
        },
        (ColumnType::Decimal(scale), Value::Text(s)) => NativeCell::Decimal {
            units: parse_decimal(s, *scale).ok_or_else(mismatch)?,
            scale: *scale,
        },
        _ => return Err(mismatch()),
    };
    Ok(cell)
}

/// Accepts ISO dates/timestamps and US-style `MM/DD/YY[YY]` dates.
fn parse_temporal(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if s.contains('/') {
        let year_len = s.rsplit('/').next()?.len();
        let fmt = if year_len == 2 { "%m/%d/%y" } else { "%m/%d/%Y" };
        return NaiveDate::parse_from_str(s, fmt).ok()?.and_hms_opt(0, 0, 0);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?.and_hms_opt(0, 0, 0)
}

fn parse_time(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s.trim(), "%H:%M:%S%.f").ok()
}

fn parse_decimal(s: &str, scale: u8) -> Option<i64> {
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    if frac_part.len() > scale as usize {
        return None;
    }
    let mut units: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    for _ in 0..scale {
        units = units.checked_mul(10)?;
    }
    if !frac_part.is_empty() {
        let frac: i64 = frac_part.parse().ok()?;
        units = units.checked_add(frac.checked_mul(10i64.pow(u32::from(scale) - frac_part.len() as u32))?)?;
    }
    Some(if neg { -units } else { units })
}

fn ten_thousandths(t: &NaiveTime) -> u32 {
    t.nanosecond() / 100_000
}

/// Text rendering used by `cast(... as char(n))`; `None` for types that
/// have no text form (octets, blobs).
fn cell_to_text(cell: &NativeCell) -> Option<String> {
    Some(match cell {
        NativeCell::Null => return None,
        NativeCell::Integer(v) => v.to_string(),
        NativeCell::Int128(v) => v.to_string(),
        NativeCell::Float(v) => v.to_string(),
        NativeCell::Double(v) => v.to_string(),
        NativeCell::Char(s) => s.clone(),
        NativeCell::Date(d) => d.format("%Y-%m-%d").to_string(),
        NativeCell::Time(t) => format!("{}.{:04}", t.format("%H:%M:%S"), ten_thousandths(t)),
        NativeCell::Timestamp(ts) => {
            format!("{}.{:04}", ts.format("%Y-%m-%d %H:%M:%S"), ten_thousandths(&ts.time()))
        }
        NativeCell::Decimal { units, scale } => {
            let scale = *scale as usize;
            let sign = if *units < 0 { "-" } else { "" };
            let digits = format!("{:0>width$}", units.unsigned_abs(), width = scale + 1);
            let (i, f) = digits.split_at(digits.len() - scale);
            if scale == 0 {
                format!("{sign}{i}")
            } else {
                format!("{sign}{i}.{f}")
            }
        }
        NativeCell::Octets(_) | NativeCell::Blob(_) => return None,
    })
}

#[derive(Clone)]
struct Projection {
    column: usize,
    name: String,
    cast: Option<CastTarget>,
}

struct MemoryRows {
    table: Arc<Table>,
    projections: Vec<Projection>,
    next: usize,
    end: usize,
    buffer: std::vec::IntoIter<Vec<NativeCell>>,
    failed: bool,
}

const SCAN_BATCH: usize = 1024;

impl MemoryRows {
    fn project(&self, cells: &[NativeCell]) -> Result<Row, BackendError> {
        let mut out = Vec::with_capacity(self.projections.len());
        for (pos, p) in self.projections.iter().enumerate() {
            let cell = &cells[p.column];
            let value = match &p.cast {
                None => map_cell(cell).map_err(|e| BackendError::UnsupportedType {
                    column: p.name.clone(),
                    index: pos + 1,
                    type_name: e.type_name.to_owned(),
                })?,
                Some(_) if *cell == NativeCell::Null => Value::Null,
                Some(target) => {
                    let text = cell_to_text(cell).ok_or_else(|| BackendError::TypeMismatch {
                        table: self.table.schema.name.clone(),
                        column: p.name.clone(),
                        expected: "a type castable to text".into(),
                        found: cell.type_name().into(),
                    })?;
                    let (limit, pad) = match target {
                        CastTarget::Char(n) => (*n, true),
                        CastTarget::Varchar(n) => (*n, false),
                    };
                    let len = text.chars().count();
                    if len > limit as usize {
                        return Err(BackendError::Truncation {
                            table: self.table.schema.name.clone(),
                            column: p.name.clone(),
                            limit,
                        });
                    }
                    let mut text = text;
                    if pad {
                        text.extend(std::iter::repeat_n(' ', limit as usize - len));
                    }
                    Value::Text(text)
                }
            };
            out.push(value);
        }
        Ok(Row(out))
    }
}

impl Iterator for MemoryRows {
    type Item = Result<Row, BackendError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let cells = match self.buffer.next() {
            Some(c) => c,
            None => {
                if self.next >= self.end {
                    return None;
                }
                let upto = (self.next + SCAN_BATCH).min(self.end);
                let batch = self.table.data.read().expect("table lock").rows[self.next..upto].to_vec();
                self.next = upto;
                self.buffer = batch.into_iter();
                self.buffer.next()?
            }
        };
        let row = self.project(&cells);
        self.failed = row.is_err();
        Some(row)
    }
}

impl Connector for MemoryConnection {
    fn query(&mut self, select_sql: &str) -> Result<RowStream<'_>, BackendError> {
        self.check_alive()?;
        let dialect = *self.db.shared.dialect.lock().expect("dialect lock");
        let select = match sql::parse_statement(select_sql, dialect)? {
            Statement::Select(s) => s,
            _ => return Err(BackendError::Syntax("expected a SELECT statement".into())),
        };
        let table = self.db.table(&select.table)?;
        let mut projections = Vec::new();
        for item in select.items {
            match item {
                SelectItem::All => projections.extend(table.schema.columns.iter().enumerate().map(|(i, c)| {
                    Projection {
                        column: i,
                        name: c.name.clone(),
                        cast: None,
                    }
                })),
                SelectItem::Column(name) => projections.push(Projection {
                    column: table.schema.column_index(&name)?,
                    name,
                    cast: None,
                }),
                SelectItem::Cast { column, target } => projections.push(Projection {
                    column: table.schema.column_index(&column)?,
                    name: column,
                    cast: Some(target),
                }),
            }
        }
        // Tables are append-only, so the committed prefix is a stable snapshot.
        let end = table.data.read().expect("table lock").rows.len();
        Ok(Box::new(MemoryRows {
            table,
            projections,
            next: 0,
            end,
            buffer: Vec::new().into_iter(),
            failed: false,
        }))
    }

    fn insert(&mut self, insert_sql: &str, row: &Row) -> Result<(), BackendError> {
        self.check_alive()?;
        let p = self.prepared(insert_sql)?;
        self.insert_prepared(&p, row.fields())
    }

    fn begin(&mut self) -> Result<(), BackendError> {
        self.check_alive()
    }

    fn commit(&mut self) -> Result<(), BackendError> {
        self.check_alive()?;
        let latency = self.db.commit_latency();
        if !latency.is_zero() {
            // Spin rather than sleep: sleeps this short overshoot badly.
            let start = Instant::now();
            while start.elapsed() < latency {
                std::hint::spin_loop();
            }
        }
        if self.pending.is_empty() {
            return Ok(());
        }
        let pending = std::mem::take(&mut self.pending);
        self.pending_keys.clear();
        let _guard = self.db.shared.commit_lock.lock().expect("commit lock");
        // Another connection may have committed a conflicting key since our
        // insert-time check; verify everything before publishing anything.
        let mut batch_keys: HashSet<(String, Key)> = HashSet::new();
        for (table, cells) in &pending {
            if let Some(key) = table.key_of(cells) {
                let clash = table.data.read().expect("table lock").keys.contains(&key)
                    || !batch_keys.insert((table.schema.name.clone(), key));
                if clash {
                    return Err(BackendError::DuplicateKey {
                        table: table.schema.name.clone(),
                        key: table.describe_key(cells),
                    });
                }
            }
        }
        let mut iter = pending.into_iter().peekable();
        while let Some((table, cells)) = iter.next() {
            let mut data = table.data.write().expect("table lock");
            let push = |data: &mut TableData, cells: Vec<NativeCell>| {
                if let Some(key) = table.key_of(&cells) {
                    data.keys.insert(key);
                }
                data.rows.push(cells);
            };
            push(&mut data, cells);
            while let Some((next, _)) = iter.peek() {
                if !Arc::ptr_eq(next, &table) {
                    break;
                }
                let (_, cells) = iter.next().expect("peeked");
                push(&mut data, cells);
            }
        }
        Ok(())
    }

    fn rollback(&mut self) -> Result<(), BackendError> {
        self.pending.clear();
        self.pending_keys.clear();
        self.check_alive()
    }

    fn close(&mut self) -> Result<(), BackendError> {
        self.pending.clear();
        self.pending_keys.clear();
        self.closed = true;
        Ok(())
    }
}
