//! Parameterized natural-language expressions.
//!
//! Placeholders are written `{column}` for single-table operators and
//! `{column:left}` / `{column:right}` for joins. `{{` and `}}` produce literal
//! braces.

use std::borrow::Cow;
use std::fmt;

use thiserror::Error;

use crate::table::{RowId, Schema, Table, Value};

#[derive(Debug, Error, PartialEq)]
pub enum LangexError {
    #[error("unbalanced '{brace}' at byte {pos}")]
    Unbalanced { brace: char, pos: usize },
    #[error("empty placeholder name at byte {0}")]
    EmptyPlaceholder(usize),
    #[error("invalid side tag {tag:?} in placeholder {{{name}:{tag}}}")]
    InvalidSide { name: String, tag: String },
    #[error("placeholder {{{0}}} does not name a column")]
    UnknownColumn(String),
    #[error("placeholder {{{0}}} uses a side tag outside a join")]
    SideInSingleMode(String),
    #[error("placeholder {{{0}}} needs a :left or :right tag in a join")]
    MissingSideTag(String),
    #[error("join expression has no {0} placeholder")]
    MissingSide(Side),
    #[error("expression references no columns")]
    NoPlaceholders,
    #[error("placeholder {{{column}}} is null at {row}")]
    NullCell { column: String, row: RowId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    None,
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::None => "untagged",
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placeholder {
    pub name: String,
    pub side: Side,
}

impl Placeholder {
    /// Column name this placeholder reads, with the side tag folded back in
    /// (`name:left`) when it is untagged in the source schema.
    fn tagged_name(&self) -> String {
        match self.side {
            Side::None => self.name.clone(),
            side => format!("{}:{}", self.name, side),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Segment {
    Literal(String),
    Placeholder(Placeholder),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Join,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Langex {
    segments: Vec<Segment>,
}

impl std::str::FromStr for Langex {
    type Err = LangexError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Langex::parse(s)
    }
}

impl Langex {
    pub fn parse(src: &str) -> Result<Self, LangexError> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < src.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    lit.push('{');
                    i += 2;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    lit.push('}');
                    i += 2;
                }
                b'}' => return Err(LangexError::Unbalanced { brace: '}', pos: i }),
                b'{' => {
                    let rest = &src[i + 1..];
                    let end = rest
                        .find(['{', '}'])
                        .filter(|&e| rest.as_bytes()[e] == b'}')
                        .ok_or(LangexError::Unbalanced { brace: '{', pos: i })?;
                    let body = &rest[..end];
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut lit)));
                    }
                    segments.push(Segment::Placeholder(parse_placeholder(body, i)?));
                    i += end + 2;
                }
                _ => {
                    let ch = src[i..].chars().next().expect("in bounds");
                    lit.push(ch);
                    i += ch.len_utf8();
                }
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &Placeholder> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Placeholder(p) => Some(p),
            Segment::Literal(_) => None,
        })
    }

    /// Distinct column names referenced for `side`, in first-use order.
    pub fn columns(&self, side: Side) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in self.placeholders().filter(|p| p.side == side) {
            if !out.contains(&p.name) {
                out.push(p.name.clone());
            }
        }
        out
    }

    /// Re-serializes to source syntax, escaping literal braces.
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(&s.replace('{', "{{").replace('}', "}}")),
                Segment::Placeholder(p) => {
                    out.push('{');
                    out.push_str(&p.name);
                    if p.side != Side::None {
                        out.push(':');
                        out.push_str(&p.side.to_string());
                    }
                    out.push('}');
                }
            }
        }
        out
    }

    /// The expression with every placeholder replaced by its column name.
    /// Used as the task description when the cells travel separately.
    pub fn instruction(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(l) => l.as_str(),
                Segment::Placeholder(p) => p.name.as_str(),
            })
            .collect()
    }

    /// The expression with placeholders removed, whitespace collapsed.
    pub fn without_placeholders(&self) -> String {
        let joined: String = self
            .segments
            .iter()
            .filter_map(|s| match s {
                Segment::Literal(l) => Some(l.as_str()),
                Segment::Placeholder(_) => None,
            })
            .collect();
        joined.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    /// Checks every placeholder against the schema(s).
    ///
    /// In single mode a tagged placeholder is accepted only when the schema
    /// literally contains `name:side` (a column produced by an earlier join).
    pub fn validate(&self, left: &Schema, right: Option<&Schema>, mode: Mode) -> Result<(), LangexError> {
        match mode {
            Mode::Single => {
                for p in self.placeholders() {
                    match p.side {
                        Side::None if left.contains(&p.name) => {}
                        Side::None => return Err(LangexError::UnknownColumn(p.name.clone())),
                        _ if left.contains(&p.tagged_name()) => {}
                        _ => return Err(LangexError::SideInSingleMode(p.tagged_name())),
                    }
                }
            }
            Mode::Join => {
                let right = right.unwrap_or(left);
                let (mut has_left, mut has_right) = (false, false);
                for p in self.placeholders() {
                    let schema = match p.side {
                        Side::Left => {
                            has_left = true;
                            left
                        }
                        Side::Right => {
                            has_right = true;
                            right
                        }
                        Side::None => return Err(LangexError::MissingSideTag(p.name.clone())),
                    };
                    if !schema.contains(&p.name) {
                        return Err(LangexError::UnknownColumn(p.tagged_name()));
                    }
                }
                if !has_left {
                    return Err(LangexError::MissingSide(Side::Left));
                }
                if !has_right {
                    return Err(LangexError::MissingSide(Side::Right));
                }
            }
        }
        Ok(())
    }

    /// Substitutes placeholders through `lookup`, which returns the cell text
    /// or `None` for a null cell.
    pub fn render_with<'a, F>(&self, mut lookup: F) -> Result<String, LangexError>
    where
        F: FnMut(&Placeholder) -> Result<Option<Cow<'a, str>>, LangexError>,
    {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Placeholder(p) => match lookup(p)? {
                    Some(text) => out.push_str(&text),
                    None => {
                        return Err(LangexError::NullCell {
                            column: p.tagged_name(),
                            row: RowId(usize::MAX),
                        })
                    }
                },
            }
        }
        Ok(out)
    }

    /// Renders against one row of a single table.
    pub fn render(&self, table: &Table, row: RowId) -> Result<String, LangexError> {
        self.render_with(|p| cell_text(table, p, row))
            .map_err(|e| with_row(e, row))
    }

    /// Renders a join expression against a (left row, right row) pair.
    pub fn render_pair(
        &self,
        left: &Table,
        left_row: RowId,
        right: &Table,
        right_row: RowId,
    ) -> Result<String, LangexError> {
        self.render_with(|p| match p.side {
            Side::Right => cell_text(right, p, right_row).map_err(|e| with_row(e, right_row)),
            _ => cell_text(left, p, left_row).map_err(|e| with_row(e, left_row)),
        })
    }
}

/// Join template with every cell rendered once per row, so rendering a pair
/// is a single concatenation.
pub(crate) struct PairTemplate {
    parts: Vec<Part>,
}

enum Part {
    Literal(String),
    Left(Vec<String>),
    Right(Vec<String>),
}

impl PairTemplate {
    pub(crate) fn render(&self, left_row: RowId, right_row: RowId) -> String {
        fn text(p: &Part, l: RowId, r: RowId) -> &str {
            match p {
                Part::Literal(s) => s,
                Part::Left(cells) => &cells[l.0],
                Part::Right(cells) => &cells[r.0],
            }
        }
        let text = |p| text(p, left_row, right_row);
        let mut out = String::with_capacity(self.parts.iter().map(|p| text(p).len()).sum());
        for p in &self.parts {
            out.push_str(text(p));
        }
        out
    }
}

impl Langex {
    /// Fails on the first null cell a pair could reference.
    pub(crate) fn pair_template(&self, left: &Table, right: &Table) -> Result<PairTemplate, LangexError> {
        let cells = |table: &Table, p: &Placeholder| -> Result<Vec<String>, LangexError> {
            table
                .row_ids()
                .map(|row| match cell_text(table, p, row).map_err(|e| with_row(e, row))? {
                    Some(text) => Ok(text.into_owned()),
                    None => Err(LangexError::NullCell {
                        column: p.tagged_name(),
                        row,
                    }),
                })
                .collect()
        };
        let parts = self
            .segments
            .iter()
            .map(|seg| match seg {
                Segment::Literal(s) => Ok(Part::Literal(s.clone())),
                Segment::Placeholder(p) if p.side == Side::Right => Ok(Part::Right(cells(right, p)?)),
                Segment::Placeholder(p) => Ok(Part::Left(cells(left, p)?)),
            })
            .collect::<Result<_, _>>()?;
        Ok(PairTemplate { parts })
    }
}

fn with_row(e: LangexError, row: RowId) -> LangexError {
    match e {
        LangexError::NullCell { column, row: r } if r.0 == usize::MAX => LangexError::NullCell { column, row },
        other => other,
    }
}

fn cell_text<'a>(table: &'a Table, p: &Placeholder, row: RowId) -> Result<Option<Cow<'a, str>>, LangexError> {
    let col = table
        .column(&p.name)
        .or_else(|_| table.column(&p.tagged_name()))
        .map_err(|_| LangexError::UnknownColumn(p.tagged_name()))?;
    match &col.values[row.0] {
        Value::Null => Err(LangexError::NullCell {
            column: col.name.clone(),
            row,
        }),
        Value::Text(s) => Ok(Some(Cow::Borrowed(s.as_str()))),
        other => Ok(other.render().map(Cow::Owned)),
    }
}

fn parse_placeholder(body: &str, pos: usize) -> Result<Placeholder, LangexError> {
    let (name, side) = match body.rsplit_once(':') {
        Some((name, tag)) => {
            let side = match tag {
                "left" => Side::Left,
                "right" => Side::Right,
                _ => {
                    return Err(LangexError::InvalidSide {
                        name: name.to_string(),
                        tag: tag.to_string(),
                    })
                }
            };
            (name, side)
        }
        None => (body, Side::None),
    };
    if name.trim().is_empty() {
        return Err(LangexError::EmptyPlaceholder(pos));
    }
    Ok(Placeholder {
        name: name.to_string(),
        side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Column, Kind};

    fn schema(names: &[&str]) -> Schema {
        Schema::new(names.iter().map(|n| (n.to_string(), Kind::Text)))
    }

    #[test]
    fn parses_single_placeholder() {
        let l = Langex::parse("The {abstract} claims to outperform GPT-4").unwrap();
        let ps: Vec<_> = l.placeholders().collect();
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].name, "abstract");
        assert_eq!(ps[0].side, Side::None);
    }

    #[test]
    fn escapes() {
        let l = Langex::parse("a {{literal}}").unwrap();
        assert_eq!(l.placeholders().count(), 0);
        assert_eq!(l.segments(), &[Segment::Literal("a {literal}".into())]);
        assert_eq!(l.to_source(), "a {{literal}}");
    }

    #[test]
    fn parses_join_sides() {
        let l = Langex::parse("is the {claimed_facts:right} verified by the {facts:left}").unwrap();
        let ps: Vec<_> = l.placeholders().map(|p| (p.name.as_str(), p.side)).collect();
        assert_eq!(ps, [("claimed_facts", Side::Right), ("facts", Side::Left)]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Langex::parse("a {b"), Err(LangexError::Unbalanced { brace: '{', .. })));
        assert!(matches!(Langex::parse("a } b"), Err(LangexError::Unbalanced { brace: '}', .. })));
        assert!(matches!(Langex::parse("a {b {c}}"), Err(LangexError::Unbalanced { .. })));
        assert!(matches!(Langex::parse("{}"), Err(LangexError::EmptyPlaceholder(0))));
        assert!(matches!(Langex::parse("{:left}"), Err(LangexError::EmptyPlaceholder(_))));
        assert!(matches!(Langex::parse("{a:middle}"), Err(LangexError::InvalidSide { .. })));
    }

    #[test]
    fn validation() {
        let s = schema(&["abstract"]);
        let bad = Langex::parse("{abstrct} is good").unwrap();
        assert_eq!(
            bad.validate(&s, None, Mode::Single),
            Err(LangexError::UnknownColumn("abstrct".into()))
        );
        let ok = Langex::parse("{abstract} is good").unwrap();
        assert_eq!(ok.validate(&s, None, Mode::Single), Ok(()));

        let left_only = Langex::parse("{abstract:left} and more").unwrap();
        assert_eq!(
            left_only.validate(&s, Some(&s), Mode::Join),
            Err(LangexError::MissingSide(Side::Right))
        );
        assert!(matches!(
            left_only.validate(&s, None, Mode::Single),
            Err(LangexError::SideInSingleMode(_))
        ));
        // a column literally named by an earlier join
        let joined = schema(&["abstract:left"]);
        assert_eq!(left_only.validate(&joined, None, Mode::Single), Ok(()));
    }

    #[test]
    fn renders_rows() {
        let t = Table::new(vec![Column::text("a", ["x"]), Column::text("b", ["y"])]).unwrap();
        let l = Langex::parse("{a} vs {b}").unwrap();
        assert_eq!(l.render(&t, RowId(0)).unwrap(), "x vs y");

        let f = Table::new(vec![Column::float("v", [0.1]), Column::int("n", [3])]).unwrap();
        let l = Langex::parse("{v}/{n}").unwrap();
        assert_eq!(l.render(&f, RowId(0)).unwrap(), "0.1/3");
    }

    #[test]
    fn renders_join_pairs() {
        let papers = Table::new(vec![Column::text("abstract", ["We train on ImageNet."])]).unwrap();
        let datasets = Table::new(vec![Column::text("dataset", ["ImageNet"])]).unwrap();
        let l = Langex::parse("The paper {abstract:left} uses the {dataset:right}").unwrap();
        let out = l.render_pair(&papers, RowId(0), &datasets, RowId(0)).unwrap();
        assert_eq!(out, "The paper We train on ImageNet. uses the ImageNet");
    }

    #[test]
    fn null_cell_is_an_error() {
        let t = Table::new(vec![Column {
            name: "a".into(),
            kind: Kind::Text,
            values: vec![Value::Text("x".into()), Value::Null],
        }])
        .unwrap();
        let l = Langex::parse("{a}").unwrap();
        assert_eq!(
            l.render(&t, RowId(1)),
            Err(LangexError::NullCell {
                column: "a".into(),
                row: RowId(1)
            })
        );
    }

    #[test]
    fn instruction_forms() {
        let l = Langex::parse("the {doc} provides the best performance on CIFAR-10").unwrap();
        assert_eq!(l.instruction(), "the doc provides the best performance on CIFAR-10");
        assert_eq!(l.without_placeholders(), "the provides the best performance on CIFAR-10");
    }
}
