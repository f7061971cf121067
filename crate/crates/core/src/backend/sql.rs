// The SQL fragment understood by the reference backend: simple projections
// with optional casts, positional inserts, CREATE TABLE with a primary key,
// and the handful of script directives seen in schema scripts.

use super::memory::{ColumnDef, ColumnType, TableSchema};
use super::BackendError;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Str(String),
    Num(String),
    Sym(char),
}

fn syntax(msg: impl Into<String>) -> BackendError {
    BackendError::Syntax(msg.into())
}

fn tokenize(src: &str) -> Result<Vec<Token>, BackendError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            if i >= chars.len() {
                return Err(syntax("unterminated comment"));
            }
            i += 2;
        } else if c == '\'' || c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(syntax("unterminated quoted string")),
                    Some(&q) if q == c => {
                        if chars.get(i + 1) == Some(&c) {
                            s.push(c);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(if c == '\'' {
                Token::Str(s)
            } else {
                Token::Ident(s.to_lowercase())
            });
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push(Token::Num(chars[start..i].iter().collect()));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect::<String>().to_lowercase()));
        } else if "(),;?*=-+.".contains(c) {
            out.push(Token::Sym(c));
            i += 1;
        } else {
            return Err(syntax(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Literal {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Operand {
    Param,
    Literal(Literal),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum CastTarget {
    Char(u32),
    Varchar(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SelectItem {
    All,
    Column(String),
    Cast { column: String, target: CastTarget },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Select {
    pub table: String,
    pub items: Vec<SelectItem>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Insert {
    pub table: String,
    pub columns: Option<Vec<String>>,
    pub values: Vec<Operand>,
}

impl Insert {
    pub fn placeholders(&self) -> usize {
        self.values.iter().filter(|v| matches!(v, Operand::Param)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Statement {
    SetDialect(u8),
    /// `CREATE DATABASE`, `CONNECT`, `COMMIT` and similar script directives.
    Ignored,
    CreateTable(TableSchema),
    Insert(Insert),
    Select(Select),
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dialect: u8,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.tokens.len()
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token::Ident(s)) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), BackendError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(syntax(format!("expected {}, found {}", kw.to_uppercase(), self.describe())))
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), BackendError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(syntax(format!("expected '{c}', found {}", self.describe())))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of statement".into(),
            Some(Token::Ident(s)) => format!("'{s}'"),
            Some(Token::Str(s)) => format!("string '{s}'"),
            Some(Token::Num(s)) => format!("number {s}"),
            Some(Token::Sym(c)) => format!("'{c}'"),
        }
    }

    fn ident(&mut self) -> Result<String, BackendError> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            _ => {
                self.pos -= 1;
                Err(syntax(format!("expected identifier, found {}", self.describe())))
            }
        }
    }

    fn number(&mut self) -> Result<u32, BackendError> {
        match self.next() {
            Some(Token::Num(n)) => n.parse().map_err(|_| syntax(format!("expected integer, found {n}"))),
            _ => {
                self.pos -= 1;
                Err(syntax(format!("expected integer, found {}", self.describe())))
            }
        }
    }

    fn ident_list(&mut self) -> Result<Vec<String>, BackendError> {
        self.expect_sym('(')?;
        let mut out = vec![self.ident()?];
        while self.eat_sym(',') {
            out.push(self.ident()?);
        }
        self.expect_sym(')')?;
        Ok(out)
    }

    fn statement(&mut self) -> Result<Statement, BackendError> {
        let stmt = if self.eat_kw("select") {
            Statement::Select(self.select()?)
        } else if self.eat_kw("insert") {
            Statement::Insert(self.insert()?)
        } else if self.eat_kw("create") {
            if self.eat_kw("table") {
                Statement::CreateTable(self.create_table()?)
            } else if self.eat_kw("database") || self.eat_kw("schema") {
                self.pos = self.tokens.len();
                Statement::Ignored
            } else {
                return Err(syntax(format!("unsupported CREATE {}", self.describe())));
            }
        } else if self.eat_kw("set") {
            self.expect_kw("sql")?;
            self.expect_kw("dialect")?;
            let d = self.number()?;
            if !(1..=3).contains(&d) {
                return Err(syntax(format!("unsupported dialect {d}")));
            }
            Statement::SetDialect(d as u8)
        } else if self.eat_kw("commit") || self.eat_kw("connect") {
            self.pos = self.tokens.len();
            Statement::Ignored
        } else {
            return Err(syntax(format!("unsupported statement starting with {}", self.describe())));
        };
        if !self.at_end() {
            return Err(syntax(format!("unexpected {} after statement", self.describe())));
        }
        Ok(stmt)
    }

    fn select(&mut self) -> Result<Select, BackendError> {
        let mut items = vec![self.select_item()?];
        while self.eat_sym(',') {
            items.push(self.select_item()?);
        }
        self.expect_kw("from")?;
        let table = self.ident()?;
        Ok(Select { table, items })
    }

    fn select_item(&mut self) -> Result<SelectItem, BackendError> {
        if self.eat_sym('*') {
            return Ok(SelectItem::All);
        }
        if self.is_kw("cast") && self.tokens.get(self.pos + 1) == Some(&Token::Sym('(')) {
            self.pos += 2;
            let column = self.ident()?;
            self.expect_kw("as")?;
            let target = if self.eat_kw("char") || self.eat_kw("character") {
                if self.eat_kw("varying") {
                    CastTarget::Varchar(self.paren_len()?)
                } else {
                    CastTarget::Char(self.paren_len()?)
                }
            } else if self.eat_kw("varchar") {
                CastTarget::Varchar(self.paren_len()?)
            } else {
                return Err(syntax(format!("unsupported cast target {}", self.describe())));
            };
            self.expect_sym(')')?;
            return Ok(SelectItem::Cast { column, target });
        }
        Ok(SelectItem::Column(self.ident()?))
    }

    fn paren_len(&mut self) -> Result<u32, BackendError> {
        self.expect_sym('(')?;
        let n = self.number()?;
        self.expect_sym(')')?;
        if n == 0 {
            return Err(syntax("length must be positive"));
        }
        Ok(n)
    }

    fn insert(&mut self) -> Result<Insert, BackendError> {
        self.expect_kw("into")?;
        let table = self.ident()?;
        let columns = if self.peek() == Some(&Token::Sym('(')) {
            Some(self.ident_list()?)
        } else {
            None
        };
        self.expect_kw("values")?;
        self.expect_sym('(')?;
        let mut values = vec![self.operand()?];
        while self.eat_sym(',') {
            values.push(self.operand()?);
        }
        self.expect_sym(')')?;
        if let Some(cols) = &columns {
            if cols.len() != values.len() {
                return Err(syntax(format!(
                    "{} columns listed but {} values given",
                    cols.len(),
                    values.len()
                )));
            }
        }
        Ok(Insert { table, columns, values })
    }

    fn operand(&mut self) -> Result<Operand, BackendError> {
        if self.eat_sym('?') {
            return Ok(Operand::Param);
        }
        let negative = if self.eat_sym('-') {
            true
        } else {
            self.eat_sym('+');
            false
        };
        match self.next() {
            Some(Token::Num(n)) => {
                let text = if negative { format!("-{n}") } else { n };
                let lit = if text.contains(['.', 'e', 'E']) {
                    Literal::Float(text.parse().map_err(|_| syntax(format!("bad number {text}")))?)
                } else {
                    Literal::Int(text.parse().map_err(|_| syntax(format!("integer {text} out of range")))?)
                };
                Ok(Operand::Literal(lit))
            }
            Some(Token::Str(s)) if !negative => Ok(Operand::Literal(Literal::Text(s))),
            Some(Token::Ident(s)) if s == "null" && !negative => Ok(Operand::Literal(Literal::Null)),
            _ => {
                self.pos -= 1;
                Err(syntax(format!("expected value, found {}", self.describe())))
            }
        }
    }

    fn create_table(&mut self) -> Result<TableSchema, BackendError> {
        let name = self.ident()?;
        self.expect_sym('(')?;
        let mut columns: Vec<ColumnDef> = Vec::new();
        let mut primary_key: Vec<String> = Vec::new();
        loop {
            if self.eat_kw("primary") {
                self.expect_kw("key")?;
                if !primary_key.is_empty() {
                    return Err(syntax("multiple primary keys"));
                }
                primary_key = self.ident_list()?;
            } else if self.eat_kw("constraint") {
                self.ident()?;
                continue;
            } else {
                let col = self.ident()?;
                let ty = self.column_type()?;
                let mut not_null = false;
                loop {
                    if self.eat_kw("not") {
                        self.expect_kw("null")?;
                        not_null = true;
                    } else if self.eat_kw("primary") {
                        self.expect_kw("key")?;
                        if !primary_key.is_empty() {
                            return Err(syntax("multiple primary keys"));
                        }
                        primary_key = vec![col.clone()];
                    } else {
                        break;
                    }
                }
                columns.push(ColumnDef {
                    name: col,
                    ty,
                    not_null,
                });
            }
            if self.eat_sym(',') {
                continue;
            }
            self.expect_sym(')')?;
            break;
        }
        TableSchema::new(name, columns, primary_key)
    }

    fn column_type(&mut self) -> Result<ColumnType, BackendError> {
        let word = self.ident()?;
        let ty = match word.as_str() {
            "smallint" | "integer" | "int" | "bigint" => ColumnType::Integer,
            "int128" => ColumnType::Int128,
            "float" | "real" => ColumnType::Float,
            "double" => {
                self.eat_kw("precision");
                ColumnType::Double
            }
            "varchar" => ColumnType::Varchar(self.paren_len()?),
            "char" | "character" => {
                if self.eat_kw("varying") {
                    ColumnType::Varchar(self.paren_len()?)
                } else if self.peek() == Some(&Token::Sym('(')) {
                    ColumnType::Char(self.paren_len()?)
                } else {
                    ColumnType::Char(1)
                }
            }
            "varbinary" | "bytea" | "binary" => {
                if self.peek() == Some(&Token::Sym('(')) {
                    self.paren_len()?;
                }
                ColumnType::Octets
            }
            // In dialect 1, DATE carries a time of day.
            "date" if self.dialect == 1 => ColumnType::Timestamp,
            "date" => ColumnType::Date,
            "time" => ColumnType::Time,
            "timestamp" => ColumnType::Timestamp,
            "numeric" | "decimal" => {
                let (mut precision, mut scale) = (18, 0);
                if self.eat_sym('(') {
                    precision = self.number()?;
                    if self.eat_sym(',') {
                        scale = self.number()?;
                    }
                    self.expect_sym(')')?;
                }
                if precision == 0 || precision > 18 || scale > precision {
                    return Err(syntax(format!("unsupported precision ({precision}, {scale})")));
                }
                ColumnType::Decimal(scale as u8)
            }
            "blob" => {
                // BLOB SUB_TYPE n
                if self.eat_kw("sub_type") {
                    self.next();
                }
                ColumnType::Blob
            }
            other => return Err(syntax(format!("unsupported column type {other}"))),
        };
        Ok(ty)
    }
}

pub(crate) fn parse_statement(sql: &str, dialect: u8) -> Result<Statement, BackendError> {
    let mut tokens = tokenize(sql)?;
    while tokens.last() == Some(&Token::Sym(';')) {
        tokens.pop();
    }
    if tokens.is_empty() {
        return Err(syntax("empty statement"));
    }
    if tokens.contains(&Token::Sym(';')) {
        return Err(syntax("multiple statements are not allowed here"));
    }
    Parser { tokens, pos: 0, dialect }.statement()
}

/// Splits a script into statements and parses them in order, tracking
/// `SET SQL DIALECT` as it goes.
pub(crate) fn parse_script(script: &str, mut dialect: u8) -> Result<Vec<Statement>, BackendError> {
    let tokens = tokenize(script)?;
    let mut out = Vec::new();
    for (n, chunk) in tokens.split(|t| *t == Token::Sym(';')).enumerate() {
        if chunk.is_empty() {
            continue;
        }
        let stmt = Parser {
            tokens: chunk.to_vec(),
            pos: 0,
            dialect,
        }
        .statement()
        .map_err(|e| match e {
            BackendError::Syntax(m) => syntax(format!("statement {}: {m}", n + 1)),
            other => other,
        })?;
        if let Statement::SetDialect(d) = stmt {
            dialect = d;
        }
        out.push(stmt);
    }
    Ok(out)
}
