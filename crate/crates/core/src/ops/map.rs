use crate::error::Result;
use crate::langex::{Langex, Mode, Side};
use crate::lm::{Demonstration, LmRequest};
use crate::ops::{ensure_new_column, ensure_renderable};
use crate::prompts::{map_user, render_document, EXTRACT_SYSTEM, MAP_SYSTEM};
use crate::session::Session;
use crate::table::{Column, Kind, RowId, Table, Value};

#[derive(Debug, Clone, Default)]
pub struct MapOptions {
    /// Backend id; the session default when `None`.
    pub backend: Option<String>,
    pub demonstrations: Vec<Demonstration>,
}

fn prompts(table: &Table, langex: &Langex, system: &'static str, demos: &[Demonstration]) -> Result<Vec<LmRequest>> {
    let columns = langex.columns(Side::None);
    ensure_renderable(table, &columns)?;
    table
        .row_ids()
        .map(|row| {
            let context = render_document(table, row, &columns)?;
            let instruction = langex.render(table, row)?;
            Ok(LmRequest::new(system, map_user(&context, &instruction)).with_demonstrations(demos))
        })
        .collect()
}

/// Appends a text column holding the model's answer for each row. Rows whose
/// call failed get a null.
pub fn sem_map(session: &Session, table: &Table, langex: &Langex, name: &str, opts: &MapOptions) -> Result<Table> {
    let op = session.op_label("sem_map");
    session.timed(op, || {
        langex.validate(&table.schema(), None, Mode::Single)?;
        ensure_new_column(table, name)?;
        let backend = session.backend(opts.backend.as_deref())?;
        let requests = prompts(table, langex, MAP_SYSTEM, &opts.demonstrations)?;
        let values = session
            .dispatch(op, crate::lm::Role::Single, backend.as_ref(), &requests)
            .into_iter()
            .map(|r| r.map(|r| Value::Text(r.text.trim().to_string())).unwrap_or(Value::Null))
            .collect();
        Ok(table.with_column(Column::new(name, Kind::Text, values)?)?)
    })
}

/// Snippets of one model answer, split into verified quotes and the rest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub verified: Vec<String>,
    pub unverified: Vec<String>,
}

/// Splits a model answer into one snippet per non-empty line and checks each
/// against `source`. Surrounding quote marks are ignored.
pub fn verify_snippets(answer: &str, source: &str) -> Extraction {
    let mut out = Extraction::default();
    for line in answer.lines() {
        let snippet = strip_quotes(line.trim());
        if snippet.is_empty() {
            continue;
        }
        if source.contains(snippet) {
            out.verified.push(snippet.to_string());
        } else {
            out.unverified.push(snippet.to_string());
        }
    }
    out
}

fn strip_quotes(s: &str) -> &str {
    let trimmed = s
        .strip_prefix(['"', '\u{201c}'])
        .and_then(|t| t.strip_suffix(['"', '\u{201d}']));
    match trimmed {
        Some(t) if !t.is_empty() => t,
        _ => s,
    }
}

/// Text the extract snippets must be copied from: the referenced cells joined
/// by newlines.
pub fn extract_source(table: &Table, row: RowId, columns: &[String]) -> Result<String> {
    let mut parts = Vec::with_capacity(columns.len());
    for c in columns {
        parts.push(table.cell(c, row)?.render().unwrap_or_default());
    }
    Ok(parts.join("\n"))
}

/// Appends a column of verbatim snippets, newline separated, in the order
/// the model emitted them. Snippets not found in the source are dropped and
/// counted as `unverified_snippets`.
pub fn sem_extract(session: &Session, table: &Table, langex: &Langex, name: &str, opts: &MapOptions) -> Result<Table> {
    let op = session.op_label("sem_extract");
    session.timed(op, || {
        langex.validate(&table.schema(), None, Mode::Single)?;
        ensure_new_column(table, name)?;
        let backend = session.backend(opts.backend.as_deref())?;
        let columns = langex.columns(Side::None);
        let requests = prompts(table, langex, EXTRACT_SYSTEM, &opts.demonstrations)?;
        let results = session.dispatch(op, crate::lm::Role::Single, backend.as_ref(), &requests);
        let mut values = Vec::with_capacity(results.len());
        let (mut unverified, mut malformed) = (0u64, 0u64);
        for (row, result) in table.row_ids().zip(results) {
            let Ok(result) = result else {
                values.push(Value::Null);
                continue;
            };
            let source = extract_source(table, row, &columns)?;
            let ex = verify_snippets(&result.text, &source);
            unverified += ex.unverified.len() as u64;
            if ex.verified.is_empty() && !ex.unverified.is_empty() {
                malformed += 1;
            }
            values.push(Value::Text(ex.verified.join("\n")));
        }
        session.meter().update(op, |c| {
            c.unverified_snippets += unverified;
            c.malformed_outputs += malformed;
        });
        Ok(table.with_column(Column::new(name, Kind::Text, values)?)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snippets_are_checked_against_source() {
        let ex = verify_snippets("\"the cat\"\n\nsat on\nthe dog\n", "the cat sat on the mat");
        assert_eq!(ex.verified, vec!["the cat", "sat on"]);
        assert_eq!(ex.unverified, vec!["the dog"]);
    }

    #[test]
    fn lone_quote_is_kept_literal() {
        let ex = verify_snippets("\"", "say \" twice");
        assert_eq!(ex.verified, vec!["\""]);
    }
}
