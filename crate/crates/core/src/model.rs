//! Value model for records crossing the database/file boundary, plus the
//! plan and policy types that drive dumps and loads.

use std::fmt;
use std::hash::{Hash, Hasher};

/// A single dynamically-typed field.
///
/// Dates, timestamps and decimals are deliberately absent: such columns must
/// be cast to text in the select statement before they can be dumped.
#[derive(Clone)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Null => ValueKind::Null,
            Value::Int(_) => ValueKind::Int,
            Value::Float(_) => ValueKind::Float,
            Value::Text(_) => ValueKind::Text,
            Value::Bytes(_) => ValueKind::Bytes,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }
}

// Float equality is bit-pattern equality so that -0.0 != 0.0 and NaN == NaN
// (same payload). This keeps Eq/Hash lawful and roundtrips exact.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits(),
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind().hash(state);
        match self {
            Value::Null => {}
            Value::Int(v) => v.hash(state),
            Value::Float(v) => v.to_bits().hash(state),
            Value::Text(v) => v.hash(state),
            Value::Bytes(v) => v.hash(state),
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("Null"),
            Value::Int(v) => write!(f, "Int({v})"),
            Value::Float(v) => write!(f, "Float({v:?})"),
            Value::Text(v) => write!(f, "Text({v:?})"),
            Value::Bytes(v) => write!(f, "Bytes({} bytes)", v.len()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Text(v) => write!(f, "'{v}'"),
            Value::Bytes(v) => {
                f.write_str("x'")?;
                for b in v {
                    write!(f, "{b:02x}")?;
                }
                f.write_str("'")
            }
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Null, Into::into)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Null,
    Int,
    Float,
    Text,
    Bytes,
}

/// One record: an ordered tuple of fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Row(pub Vec<Value>);

impl Row {
    pub fn new(fields: Vec<Value>) -> Self {
        Row(fields)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn fields(&self) -> &[Value] {
        &self.0
    }

    pub fn into_fields(self) -> Vec<Value> {
        self.0
    }
}

impl From<Vec<Value>> for Row {
    fn from(v: Vec<Value>) -> Self {
        Row(v)
    }
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("table name is empty")]
    EmptyTableName,
    #[error("table name {0:?} cannot be used as a file name stem")]
    BadTableName(String),
    #[error("{field} statement for table {table:?} is empty")]
    EmptyStatement { table: String, field: &'static str },
    #[error("{field} statement for table {table:?} contains a line break")]
    LineBreak { table: String, field: &'static str },
}

/// What to dump for one table and how to restore it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableSpec {
    table_name: String,
    select_sql: String,
    insert_sql: String,
}

impl TableSpec {
    pub fn new(
        table_name: impl Into<String>,
        select_sql: impl Into<String>,
        insert_sql: impl Into<String>,
    ) -> Result<Self, SpecError> {
        let table_name = table_name.into();
        validate_table_name(&table_name)?;
        let select_sql = select_sql.into();
        let insert_sql = insert_sql.into();
        if select_sql.trim().is_empty() {
            return Err(SpecError::EmptyStatement {
                table: table_name,
                field: "select",
            });
        }
        if insert_sql.trim().is_empty() {
            return Err(SpecError::EmptyStatement {
                table: table_name,
                field: "insert",
            });
        }
        for (field, sql) in [("select", &select_sql), ("insert", &insert_sql)] {
            if sql.contains(['\n', '\r']) {
                return Err(SpecError::LineBreak {
                    table: table_name,
                    field,
                });
            }
        }
        Ok(TableSpec {
            table_name,
            select_sql,
            insert_sql,
        })
    }

    pub fn table_name(&self) -> &str {
        &self.table_name
    }

    pub fn select_sql(&self) -> &str {
        &self.select_sql
    }

    pub fn insert_sql(&self) -> &str {
        &self.insert_sql
    }
}

/// Table names become file name stems (`<table>.<chunk>.dump`).
pub fn validate_table_name(name: &str) -> Result<(), SpecError> {
    if name.is_empty() {
        return Err(SpecError::EmptyTableName);
    }
    let bad = name.contains(['/', '\\', '\0'])
        || name == "."
        || name == ".."
        || name.chars().any(char::is_control)
        || name.trim() != name;
    if bad {
        return Err(SpecError::BadTableName(name.to_owned()));
    }
    Ok(())
}

/// Number of positional `?` placeholders in a statement, ignoring any inside
/// single- or double-quoted literals.
pub fn count_placeholders(sql: &str) -> usize {
    let mut count = 0;
    let mut quote: Option<char> = None;
    for c in sql.chars() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' => quote = Some(c),
                '?' => count += 1,
                _ => {}
            },
        }
    }
    count
}

/// Ordered list of tables to dump. Table names are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DumpPlan {
    tables: Vec<TableSpec>,
}

impl DumpPlan {
    /// Fails with the duplicated name if two specs share a table name.
    pub fn new(tables: Vec<TableSpec>) -> Result<Self, String> {
        let mut seen = std::collections::HashSet::new();
        for t in &tables {
            if !seen.insert(t.table_name()) {
                return Err(t.table_name().to_owned());
            }
        }
        Ok(DumpPlan { tables })
    }

    pub fn tables(&self) -> &[TableSpec] {
        &self.tables
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

pub const DEFAULT_RECORDS_PER_FILE: u64 = 500_000;

/// How many records go into each dump file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkPolicy {
    records_per_file: u64,
}

impl ChunkPolicy {
    pub fn new(records_per_file: u64) -> Option<Self> {
        (records_per_file >= 1).then_some(ChunkPolicy { records_per_file })
    }

    pub fn records_per_file(&self) -> u64 {
        self.records_per_file
    }
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        ChunkPolicy {
            records_per_file: DEFAULT_RECORDS_PER_FILE,
        }
    }
}

/// When the loader commits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CommitPolicy {
    #[default]
    PerRecord,
    PerBatch(u64),
    PerFile,
}

impl CommitPolicy {
    /// `PerBatch(0)` is rejected; `PerBatch(1)` normalizes to `PerRecord`.
    pub fn per_batch(size: u64) -> Option<Self> {
        match size {
            0 => None,
            1 => Some(CommitPolicy::PerRecord),
            n => Some(CommitPolicy::PerBatch(n)),
        }
    }

    /// Records per transaction; `None` means the whole file.
    pub fn batch_size(&self) -> Option<u64> {
        match *self {
            CommitPolicy::PerRecord => Some(1),
            CommitPolicy::PerBatch(n) => Some(n.max(1)),
            CommitPolicy::PerFile => None,
        }
    }
}

impl fmt::Display for CommitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommitPolicy::PerRecord => f.write_str("record"),
            CommitPolicy::PerBatch(n) => write!(f, "batch:{n}"),
            CommitPolicy::PerFile => f.write_str("file"),
        }
    }
}

impl std::str::FromStr for CommitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(CommitPolicy::PerRecord),
            "file" => Ok(CommitPolicy::PerFile),
            _ => {
                let n = s
                    .strip_prefix("batch:")
                    .ok_or_else(|| format!("expected record, batch:N or file, got {s:?}"))?;
                let n: u64 = n
                    .parse()
                    .map_err(|_| format!("invalid batch size {n:?}"))?;
                CommitPolicy::per_batch(n).ok_or_else(|| "batch size must be at least 1".into())
            }
        }
    }
}
