//! Database connector abstraction.
//!
//! Engines talk to databases only through [`Connector`]. Drivers map their
//! native cells to [`Value`]s with [`map_cell`], which refuses anything that
//! is not representable (dates, decimals, blob handles, ...) instead of
//! coercing it.

use std::fmt;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::model::{Row, Value};

pub mod memory;
mod sql;

pub use memory::{MemoryConnection, MemoryDatabase};

/// Where and as whom to connect. The DSN is passed through verbatim.
#[derive(Clone, PartialEq, Eq)]
pub struct ConnectionConfig {
    pub dsn: String,
    pub user: String,
    pub password: String,
}

impl ConnectionConfig {
    pub fn new(dsn: impl Into<String>, user: impl Into<String>, password: impl Into<String>) -> Option<Self> {
        let dsn = dsn.into();
        if dsn.is_empty() {
            return None;
        }
        Some(ConnectionConfig {
            dsn,
            user: user.into(),
            password: password.into(),
        })
    }
}

impl fmt::Debug for ConnectionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConnectionConfig")
            .field("dsn", &self.dsn)
            .field("user", &self.user)
            .field("password", &"***")
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("unknown column {column:?} in table {table:?}")]
    UnknownColumn { table: String, column: String },
    #[error("table {0:?} already exists")]
    TableExists(String),
    #[error("duplicate key {key} violates primary key of table {table:?}")]
    DuplicateKey { table: String, key: String },
    #[error("column {table}.{column} does not accept NULL")]
    NotNull { table: String, column: String },
    #[error("cannot store {found} in column {table}.{column} of type {expected}")]
    TypeMismatch {
        table: String,
        column: String,
        expected: String,
        found: String,
    },
    #[error("value for {table}.{column} is longer than {limit} characters")]
    Truncation { table: String, column: String, limit: u32 },
    #[error("statement has {placeholders} placeholders but {params} parameters were bound")]
    ParameterCount { placeholders: usize, params: usize },
    #[error("column {column} (#{index}) has type {type_name}, which cannot be dumped; cast this column to text in select_sql")]
    UnsupportedType {
        column: String,
        /// 1-based column ordinal.
        index: usize,
        type_name: String,
    },
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("cannot open database {dsn:?}: {reason}")]
    Open { dsn: String, reason: String },
}

impl BackendError {
    pub fn is_connection_lost(&self) -> bool {
        matches!(self, BackendError::ConnectionLost(_))
    }
}

pub type RowStream<'a> = Box<dyn Iterator<Item = Result<Row, BackendError>> + 'a>;

/// One database connection, used by one worker at a time.
pub trait Connector: Send {
    /// Runs a select and streams its rows, each cell already mapped to a
    /// [`Value`].
    fn query(&mut self, select_sql: &str) -> Result<RowStream<'_>, BackendError>;

    /// Executes a parameterized insert, binding `row` positionally.
    fn insert(&mut self, insert_sql: &str, row: &Row) -> Result<(), BackendError>;

    fn begin(&mut self) -> Result<(), BackendError>;
    fn commit(&mut self) -> Result<(), BackendError>;
    fn rollback(&mut self) -> Result<(), BackendError>;

    fn close(&mut self) -> Result<(), BackendError> {
        Ok(())
    }
}

/// Hands out independent connections, one per worker.
pub trait ConnectorFactory: Sync {
    fn connect(&self) -> Result<Box<dyn Connector>, BackendError>;
}

impl<F> ConnectorFactory for F
where
    F: Fn() -> Result<Box<dyn Connector>, BackendError> + Sync,
{
    fn connect(&self) -> Result<Box<dyn Connector>, BackendError> {
        self()
    }
}

/// A datum as a driver hands it over, before mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NativeCell {
    Null,
    Integer(i64),
    /// Exact integers wider than 64 bits.
    Int128(i128),
    Float(f32),
    Double(f64),
    Char(String),
    Octets(Vec<u8>),
    Date(NaiveDate),
    Time(NaiveTime),
    Timestamp(NaiveDateTime),
    /// `units * 10^-scale`
    Decimal { units: i64, scale: u8 },
    /// Handle to an out-of-row large object.
    Blob(u64),
}

impl NativeCell {
    pub fn type_name(&self) -> &'static str {
        match self {
            NativeCell::Null => "null",
            NativeCell::Integer(_) => "integer",
            NativeCell::Int128(_) => "int128",
            NativeCell::Float(_) => "float",
            NativeCell::Double(_) => "double precision",
            NativeCell::Char(_) => "char",
            NativeCell::Octets(_) => "octets",
            NativeCell::Date(_) => "date",
            NativeCell::Time(_) => "time",
            NativeCell::Timestamp(_) => "timestamp",
            NativeCell::Decimal { .. } => "decimal",
            NativeCell::Blob(_) => "blob",
        }
    }
}

/// The native type a cell could not be mapped from.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported type {type_name}; cast this column to text in select_sql")]
pub struct UnsupportedType {
    pub type_name: &'static str,
}

/// Maps a native datum to a [`Value`]. Single-precision floats are widened
/// to binary64, so 1.3273f32 becomes 1.327299952507019.
pub fn map_cell(cell: &NativeCell) -> Result<Value, UnsupportedType> {
    match cell {
        NativeCell::Null => Ok(Value::Null),
        NativeCell::Integer(v) => Ok(Value::Int(*v)),
        NativeCell::Float(v) => Ok(Value::Float(f64::from(*v))),
        NativeCell::Double(v) => Ok(Value::Float(*v)),
        NativeCell::Char(s) => Ok(Value::Text(s.clone())),
        NativeCell::Octets(b) => Ok(Value::Bytes(b.clone())),
        other => Err(UnsupportedType {
            type_name: other.type_name(),
        }),
    }
}
