//! Column-oriented tables, CSV ingestion/emission and equality grouping.
//!
//! A [`Table`] is immutable once built. Operators produce new tables and
//! report provenance through [`RowId`]s into their input.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::index::SimIndex;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing header row")]
    MissingHeader,
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("empty column name at position {0}")]
    EmptyColumnName(usize),
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {name:?} has {found} values, table has {expected} rows")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("value {value:?} does not match kind {kind} of column {column:?}")]
    KindMismatch {
        column: String,
        kind: Kind,
        value: String,
    },
    #[error("row {row} out of range for table with {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
}

/// Position of a row inside the table an operator was invoked on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct RowId(pub usize);

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Text,
    Float,
    Int,
    Bool,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Text => "text",
            Kind::Float => "float",
            Kind::Int => "int",
            Kind::Bool => "bool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Text(String),
    Float(f64),
    Int(i64),
    Bool(bool),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn kind(&self) -> Option<Kind> {
        match self {
            Value::Null => None,
            Value::Text(_) => Some(Kind::Text),
            Value::Float(_) => Some(Kind::Float),
            Value::Int(_) => Some(Kind::Int),
            Value::Bool(_) => Some(Kind::Bool),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    /// Textual form used in prompts and CSV output. `None` for nulls.
    pub fn render(&self) -> Option<String> {
        match self {
            Value::Null => None,
            Value::Text(s) => Some(s.clone()),
            // `Display` for f64 is the shortest representation that round-trips.
            Value::Float(v) => Some(v.to_string()),
            Value::Int(v) => Some(v.to_string()),
            Value::Bool(v) => Some(v.to_string()),
        }
    }

    fn group_key(&self) -> KeyCell {
        match self {
            Value::Null => KeyCell::Null,
            Value::Text(s) => KeyCell::Text(s.clone()),
            Value::Float(v) => KeyCell::Float(if *v == 0.0 { 0 } else { v.to_bits() }),
            Value::Int(v) => KeyCell::Int(*v),
            Value::Bool(v) => KeyCell::Bool(*v),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum KeyCell {
    Null,
    Text(String),
    Float(u64),
    Int(i64),
    Bool(bool),
}

/// Hashable tuple of cell values identifying one equality group.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupKey(Vec<KeyCell>);

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: Kind,
    pub values: Vec<Value>,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: Kind, values: Vec<Value>) -> Result<Self, TableError> {
        let name = name.into();
        for v in &values {
            if let Some(k) = v.kind() {
                if k != kind {
                    return Err(TableError::KindMismatch {
                        column: name,
                        kind,
                        value: v.render().unwrap_or_default(),
                    });
                }
            }
        }
        Ok(Self { name, kind, values })
    }

    pub fn text<S: Into<String>>(name: &str, values: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.to_string(),
            kind: Kind::Text,
            values: values.into_iter().map(|s| Value::Text(s.into())).collect(),
        }
    }

    pub fn float(name: &str, values: impl IntoIterator<Item = f64>) -> Self {
        Self {
            name: name.to_string(),
            kind: Kind::Float,
            values: values.into_iter().map(Value::Float).collect(),
        }
    }

    pub fn int(name: &str, values: impl IntoIterator<Item = i64>) -> Self {
        Self {
            name: name.to_string(),
            kind: Kind::Int,
            values: values.into_iter().map(Value::Int).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub kind: Kind,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    pub fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: impl IntoIterator<Item = (String, Kind)>) -> Self {
        Self {
            fields: fields
                .into_iter()
                .map(|(name, kind)| Field { name, kind })
                .collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    pub fn kind_of(&self, name: &str) -> Option<Kind> {
        self.index_of(name).map(|i| self.fields[i].kind)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }
}

/// A similarity index attached to a column, with the mapping from this
/// table's rows to rows of the index.
#[derive(Debug, Clone)]
pub struct AttachedIndex {
    pub index: Arc<SimIndex>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    columns: Vec<Column>,
    row_count: usize,
    indices: BTreeMap<String, AttachedIndex>,
}

impl PartialEq for Table {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns && self.row_count == other.row_count
    }
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self, TableError> {
        let row_count = columns.first().map_or(0, |c| c.values.len());
        let mut seen = HashSet::new();
        for (i, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(TableError::EmptyColumnName(i));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
            if c.values.len() != row_count {
                return Err(TableError::LengthMismatch {
                    name: c.name.clone(),
                    expected: row_count,
                    found: c.values.len(),
                });
            }
        }
        Ok(Self {
            columns,
            row_count,
            indices: BTreeMap::new(),
        })
    }

    /// Table with the given schema and no rows.
    pub fn empty(schema: &Schema) -> Self {
        Self {
            columns: schema
                .fields
                .iter()
                .map(|f| Column {
                    name: f.name.clone(),
                    kind: f.kind,
                    values: Vec::new(),
                })
                .collect(),
            row_count: 0,
            indices: BTreeMap::new(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn is_empty(&self) -> bool {
        self.row_count == 0
    }

    pub fn row_ids(&self) -> impl Iterator<Item = RowId> {
        (0..self.row_count).map(RowId)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn schema(&self) -> Schema {
        Schema {
            fields: self
                .columns
                .iter()
                .map(|c| Field {
                    name: c.name.clone(),
                    kind: c.kind,
                })
                .collect(),
        }
    }

    pub fn column(&self, name: &str) -> Result<&Column, TableError> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn cell(&self, column: &str, row: RowId) -> Result<&Value, TableError> {
        let col = self.column(column)?;
        col.values.get(row.0).ok_or(TableError::RowOutOfRange {
            row: row.0,
            rows: self.row_count,
        })
    }

    /// Rows selected (and possibly repeated) by `rows`, in that order.
    /// Attached indices follow the selection.
    pub fn take(&self, rows: &[RowId]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind,
                values: rows.iter().map(|r| c.values[r.0].clone()).collect(),
            })
            .collect();
        let indices = self
            .indices
            .iter()
            .map(|(name, att)| {
                (
                    name.clone(),
                    AttachedIndex {
                        index: Arc::clone(&att.index),
                        rows: rows.iter().map(|r| att.rows[r.0]).collect(),
                    },
                )
            })
            .collect();
        Table {
            columns,
            row_count: rows.len(),
            indices,
        }
    }

    /// Appends a column. The name must be new and the length must match.
    pub fn with_column(&self, column: Column) -> Result<Table, TableError> {
        if self.column_index(&column.name).is_some() {
            return Err(TableError::DuplicateColumn(column.name));
        }
        if column.name.is_empty() {
            return Err(TableError::EmptyColumnName(self.columns.len()));
        }
        let expected = if self.columns.is_empty() {
            column.values.len()
        } else {
            self.row_count
        };
        if column.values.len() != expected {
            return Err(TableError::LengthMismatch {
                name: column.name,
                expected,
                found: column.values.len(),
            });
        }
        let mut out = self.clone();
        out.row_count = expected;
        out.columns.push(column);
        Ok(out)
    }

    /// Vertically stacks tables sharing one schema. Attached indices are dropped.
    pub fn concat(schema: &Schema, parts: &[Table]) -> Result<Table, TableError> {
        let mut out = Table::empty(schema);
        for part in parts {
            for (dst, f) in out.columns.iter_mut().zip(&schema.fields) {
                let src = part.column(&f.name)?;
                dst.values.extend(src.values.iter().cloned());
            }
            out.row_count += part.row_count;
        }
        Ok(out)
    }

    pub fn attach_index(&mut self, column: &str, index: Arc<SimIndex>, rows: Vec<usize>) {
        self.indices
            .insert(column.to_string(), AttachedIndex { index, rows });
    }

    pub fn index(&self, column: &str) -> Option<&AttachedIndex> {
        self.indices.get(column)
    }

    pub fn indices(&self) -> &BTreeMap<String, AttachedIndex> {
        &self.indices
    }

    /// Text cells of a column; fails on nulls (with the row) or non-text kinds.
    pub fn text_column(&self, name: &str) -> Result<Vec<&str>, TextColumnError> {
        let col = self.column(name)?;
        if col.kind != Kind::Text {
            return Err(TextColumnError::NotText {
                column: name.to_string(),
                kind: col.kind,
            });
        }
        col.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_text().ok_or(TextColumnError::Null {
                    column: name.to_string(),
                    row: RowId(i),
                })
            })
            .collect()
    }
}

/// Output column names for a join: colliding names get `:left` / `:right`.
pub fn join_column_names(left: &Schema, right: &Schema) -> (Vec<String>, Vec<String>) {
    let l = left
        .names()
        .map(|n| if right.contains(n) { format!("{n}:left") } else { n.to_string() })
        .collect();
    let r = right
        .names()
        .map(|n| if left.contains(n) { format!("{n}:right") } else { n.to_string() })
        .collect();
    (l, r)
}

/// Materializes joined rows. A `None` side yields nulls for that side's
/// columns. Indices attached to a side carry over when that side is never null.
pub fn join_rows(left: &Table, right: &Table, pairs: &[(Option<RowId>, Option<RowId>)]) -> Result<Table, TableError> {
    let (lnames, rnames) = join_column_names(&left.schema(), &right.schema());
    let mut columns = Vec::with_capacity(lnames.len() + rnames.len());
    let side = |table: &Table, names: Vec<String>, pick: &dyn Fn(&(Option<RowId>, Option<RowId>)) -> Option<RowId>| {
        table
            .columns
            .iter()
            .zip(names)
            .map(|(c, name)| Column {
                name,
                kind: c.kind,
                values: pairs
                    .iter()
                    .map(|p| pick(p).map_or(Value::Null, |r| c.values[r.0].clone()))
                    .collect(),
            })
            .collect::<Vec<_>>()
    };
    columns.extend(side(left, lnames.clone(), &|p| p.0));
    columns.extend(side(right, rnames.clone(), &|p| p.1));
    let mut out = Table::new(columns)?;
    out.row_count = pairs.len();

    let mut indices = BTreeMap::new();
    for (table, names, pick) in [
        (left, &lnames, (&|p: &(Option<RowId>, Option<RowId>)| p.0) as &dyn Fn(&_) -> Option<RowId>),
        (right, &rnames, &|p: &(Option<RowId>, Option<RowId>)| p.1),
    ] {
        let rows: Option<Vec<RowId>> = pairs.iter().map(pick).collect();
        let Some(rows) = rows else { continue };
        for (col, att) in &table.indices {
            let pos = table.column_index(col).expect("index on existing column");
            indices.insert(
                names[pos].clone(),
                AttachedIndex {
                    index: Arc::clone(&att.index),
                    rows: rows.iter().map(|r| att.rows[r.0]).collect(),
                },
            );
        }
    }
    out.indices = indices;
    Ok(out)
}

#[derive(Debug, Error)]
pub enum TextColumnError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("column {column:?} has kind {kind}, expected text")]
    NotText { column: String, kind: Kind },
    #[error("column {column:?} is null at {row}")]
    Null { column: String, row: RowId },
}

fn looks_numeric(s: &str) -> bool {
    s.bytes().any(|b| b.is_ascii_digit())
}

fn parse_bool(s: &str) -> Option<bool> {
    if s.eq_ignore_ascii_case("true") {
        Some(true)
    } else if s.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

/// Infers one column kind from raw fields, trying int, float, bool, then text.
/// Empty fields are nulls and do not vote.
pub fn infer_kind<'a>(fields: impl IntoIterator<Item = &'a str> + Clone) -> Kind {
    let present = || fields.clone().into_iter().filter(|s| !s.is_empty());
    if present().next().is_none() {
        return Kind::Text;
    }
    if present().all(|s| s.parse::<i64>().is_ok()) {
        Kind::Int
    } else if present().all(|s| looks_numeric(s) && s.parse::<f64>().is_ok()) {
        Kind::Float
    } else if present().all(|s| parse_bool(s).is_some()) {
        Kind::Bool
    } else {
        Kind::Text
    }
}

fn parse_cell(raw: &str, kind: Kind) -> Value {
    if raw.is_empty() {
        return Value::Null;
    }
    match kind {
        Kind::Text => Value::Text(raw.to_string()),
        Kind::Int => Value::Int(raw.parse().expect("kind inferred as int")),
        Kind::Float => Value::Float(raw.parse().expect("kind inferred as float")),
        Kind::Bool => Value::Bool(parse_bool(raw).expect("kind inferred as bool")),
    }
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Table, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(TableError::MissingHeader),
    };
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    let mut seen = HashSet::new();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(TableError::EmptyColumnName(i));
        }
        if !seen.insert(n.as_str()) {
            return Err(TableError::DuplicateColumn(n.clone()));
        }
    }
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); names.len()];
    for rec in records {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(TableError::Ragged {
                line: rec.position().map_or(0, |p| p.line()),
                expected: names.len(),
                found: rec.len(),
            });
        }
        for (col, field) in raw.iter_mut().zip(rec.iter()) {
            col.push(field.to_string());
        }
    }
    let columns = names
        .into_iter()
        .zip(raw)
        .map(|(name, fields)| {
            let kind = infer_kind(fields.iter().map(String::as_str));
            Column {
                name,
                kind,
                values: fields.iter().map(|f| parse_cell(f, kind)).collect(),
            }
        })
        .collect();
    Table::new(columns)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Table, TableError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| TableError::Open {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file))
}

pub fn write_csv_to<W: std::io::Write>(table: &Table, writer: W) -> Result<(), TableError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(writer);
    w.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
    for row in 0..table.row_count {
        w.write_record(
            table
                .columns
                .iter()
                .map(|c| c.values[row].render().unwrap_or_default()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<(), TableError> {
    let file = std::fs::File::create(path)?;
    write_csv_to(table, std::io::BufWriter::new(file))
}

/// Groups rows by equality over `cols`. Groups appear in first-occurrence
/// order and row ids inside a group are ascending.
pub fn partition_by_equality(
    table: &Table,
    cols: &[impl AsRef<str>],
) -> Result<Vec<(GroupKey, Vec<RowId>)>, TableError> {
    let columns = cols
        .iter()
        .map(|c| table.column(c.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut groups: IndexMap<GroupKey, Vec<RowId>> = IndexMap::new();
    for row in 0..table.row_count {
        let key = GroupKey(columns.iter().map(|c| c.values[row].group_key()).collect());
        groups.entry(key).or_default().push(RowId(row));
    }
    if groups.is_empty() && cols.is_empty() {
        // vacuous key over an empty table still forms one (empty) group
        groups.insert(GroupKey(Vec::new()), Vec::new());
    }
    Ok(groups.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(s: &str) -> Result<Table, TableError> {
        read_csv(s.as_bytes())
    }

    #[test]
    fn loads_text_columns() {
        let t = csv("title,abstract\na,x\nb,y\nc,z\n").unwrap();
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.schema().fields.len(), 2);
        assert!(t.columns().iter().all(|c| c.kind == Kind::Text));
    }

    #[test]
    fn header_only_is_empty_table() {
        let t = csv("a,b\n").unwrap();
        assert_eq!(t.row_count(), 0);
        assert_eq!(t.schema().names().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn mixed_column_falls_back_to_text() {
        assert_eq!(infer_kind(["1", "2", "x"]), Kind::Text);
        let t = csv("v\n1\n2\nx\n").unwrap();
        assert_eq!(t.column("v").unwrap().kind, Kind::Text);
        assert_eq!(t.cell("v", RowId(0)).unwrap(), &Value::Text("1".into()));
    }

    #[test]
    fn inference_order() {
        assert_eq!(infer_kind(["1", "-2", ""]), Kind::Int);
        assert_eq!(infer_kind(["1", "2.5"]), Kind::Float);
        assert_eq!(infer_kind(["true", "False"]), Kind::Bool);
        assert_eq!(infer_kind(["inf", "1.0"]), Kind::Text);
        assert_eq!(infer_kind(["", ""]), Kind::Text);
    }

    #[test]
    fn empty_field_is_null() {
        let t = csv("a,b\n1,\n,x\n").unwrap();
        assert_eq!(t.cell("a", RowId(1)).unwrap(), &Value::Null);
        assert_eq!(t.cell("b", RowId(0)).unwrap(), &Value::Null);
        assert_eq!(t.column("a").unwrap().kind, Kind::Int);
    }

    #[test]
    fn rejects_duplicates_and_ragged_rows() {
        assert!(matches!(csv("a,a\n1,2\n"), Err(TableError::DuplicateColumn(_))));
        assert!(matches!(
            csv("a,b\n1,2\n3\n"),
            Err(TableError::Ragged {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(csv(""), Err(TableError::MissingHeader)));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv"),
            Err(TableError::Open { .. })
        ));
    }

    #[test]
    fn quotes_embedded_separators() {
        let t = Table::new(vec![Column::text("t", ["a,b", "say \"hi\"", "line\nbreak"])]).unwrap();
        let mut out = Vec::new();
        write_csv_to(&t, &mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        assert_eq!(s, "t\r\n\"a,b\"\r\n\"say \"\"hi\"\"\"\r\n\"line\nbreak\"\r\n");
        assert_eq!(read_csv(s.as_bytes()).unwrap(), t);
    }

    #[test]
    fn empty_table_writes_header_only() {
        let t = Table::empty(&Schema::new([("a".to_string(), Kind::Text)]));
        let mut out = Vec::new();
        write_csv_to(&t, &mut out).unwrap();
        assert_eq!(out, b"a\r\n");
    }

    #[test]
    fn partition_examples() {
        let t = Table::new(vec![Column::text("c", ["a", "b", "a"])]).unwrap();
        let all = partition_by_equality(&t, &[] as &[&str]).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].1, vec![RowId(0), RowId(1), RowId(2)]);

        let g = partition_by_equality(&t, &["c"]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].1, vec![RowId(0), RowId(2)]);
        assert_eq!(g[1].1, vec![RowId(1)]);

        assert!(matches!(
            partition_by_equality(&t, &["nope"]),
            Err(TableError::UnknownColumn(_))
        ));
    }

    #[test]
    fn take_and_with_column() {
        let t = Table::new(vec![Column::int("x", [1, 2, 3])]).unwrap();
        let s = t.take(&[RowId(2), RowId(0)]);
        assert_eq!(s.column("x").unwrap().values, vec![Value::Int(3), Value::Int(1)]);
        assert!(t.with_column(Column::int("x", [0, 0, 0])).is_err());
        assert!(t.with_column(Column::int("y", [0])).is_err());
        assert_eq!(t.with_column(Column::int("y", [4, 5, 6])).unwrap().columns().len(), 2);
    }
}
