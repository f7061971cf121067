//! Plan file reader/writer.
//!
//! ```text
//! # comment
//! table: cross_rate
//! select: select from_currency, to_currency, conv_rate, cast(update_date as char(24)) from cross_rate
//! insert: insert into cross_rate (from_currency, to_currency, conv_rate, update_date) values (?, ?, ?, ?)
//! ```
//!
//! Entries are separated by one or more blank lines.

use crate::model::{DumpPlan, TableSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed plan at line {line}: {message}")]
pub struct MalformedPlan {
    pub line: usize,
    pub message: String,
}

impl MalformedPlan {
    fn new(line: usize, message: impl Into<String>) -> Self {
        MalformedPlan {
            line,
            message: message.into(),
        }
    }
}

const KEYS: [&str; 3] = ["table", "select", "insert"];

pub fn parse_plan(text: &str) -> Result<DumpPlan, MalformedPlan> {
    let mut tables: Vec<TableSpec> = Vec::new();
    // (line of the `table:` key, values collected so far)
    let mut pending: Option<(usize, Vec<String>)> = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        last_line = lineno;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.starts_with('#') {
            continue;
        }
        if line.trim().is_empty() {
            if let Some((start, values)) = &pending {
                return Err(MalformedPlan::new(
                    lineno,
                    format!(
                        "entry starting at line {start} ends before its `{}:` line",
                        KEYS[values.len()]
                    ),
                ));
            }
            continue;
        }

        let expected = pending.as_ref().map_or(0, |(_, v)| v.len());
        let key = KEYS[expected];
        let value = parse_keyed(line, key, lineno)?;
        match &mut pending {
            None => pending = Some((lineno, vec![value])),
            Some((_, values)) => values.push(value),
        }

        if expected == 2 {
            let (start, mut values) = pending.take().expect("entry in progress");
            let insert = values.pop().expect("insert");
            let select = values.pop().expect("select");
            let name = values.pop().expect("table");
            if tables.iter().any(|t| t.table_name() == name) {
                return Err(MalformedPlan::new(
                    start,
                    format!("duplicate table name {name:?}"),
                ));
            }
            let spec = TableSpec::new(name, select, insert)
                .map_err(|e| MalformedPlan::new(start, e.to_string()))?;
            tables.push(spec);
        }
    }

    if let Some((start, values)) = pending {
        return Err(MalformedPlan::new(
            last_line.max(start),
            format!(
                "entry starting at line {start} is missing its `{}:` line",
                KEYS[values.len()]
            ),
        ));
    }
    if tables.is_empty() {
        return Err(MalformedPlan::new(last_line.max(1), "plan contains no entries"));
    }
    Ok(DumpPlan::new(tables).expect("uniqueness checked while parsing"))
}

fn parse_keyed(line: &str, key: &str, lineno: usize) -> Result<String, MalformedPlan> {
    let Some(rest) = line.strip_prefix(key).and_then(|r| r.strip_prefix(':')) else {
        let found = line.split(':').next().unwrap_or(line).trim();
        return Err(MalformedPlan::new(
            lineno,
            format!("expected `{key}:` but found `{found}`"),
        ));
    };
    let value = rest.strip_prefix(' ').unwrap_or(rest);
    if value.trim().is_empty() {
        return Err(MalformedPlan::new(lineno, format!("empty `{key}:` value")));
    }
    Ok(value.to_owned())
}

/// Serializes a plan in the format accepted by [`parse_plan`].
pub fn render_plan(plan: &DumpPlan) -> String {
    let mut out = String::new();
    for (i, t) in plan.tables().iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("table: ");
        out.push_str(t.table_name());
        out.push_str("\nselect: ");
        out.push_str(t.select_sql());
        out.push_str("\ninsert: ");
        out.push_str(t.insert_sql());
        out.push('\n');
    }
    out
}
