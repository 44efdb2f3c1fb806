use crate::error::Result;
use crate::langex::{Langex, Mode, Side};
use crate::lm::{Demonstration, LmRequest, TRUE_FALSE};
use crate::ops::{answer_labelled, ensure_renderable, ModelChoice};
use crate::prompts::{filter_user, render_document, FILTER_SYSTEM};
use crate::session::Session;
use crate::table::{RowId, Table};

/// Rows per dispatched batch; bounds memory on very large inputs.
pub(crate) const CHUNK: usize = 16_384;

#[derive(Debug, Clone, Default)]
pub struct FilterOptions {
    pub model: ModelChoice,
    pub demonstrations: Vec<Demonstration>,
}

pub(crate) fn filter_request(context: &[&str], claim: &str, demos: &[Demonstration]) -> LmRequest {
    LmRequest::new(FILTER_SYSTEM, filter_user(context, claim))
        .with_labels(&TRUE_FALSE)
        .with_demonstrations(demos)
        .with_max_output_chars(8)
}

/// Keeps the rows for which the model judges the rendered claim true.
/// Malformed answers count as false.
pub fn sem_filter(session: &Session, table: &Table, langex: &Langex, opts: &FilterOptions) -> Result<Table> {
    let op = session.op_label("sem_filter");
    session.timed(op, || {
        langex.validate(&table.schema(), None, Mode::Single)?;
        opts.model.check(session)?;
        let columns = langex.columns(Side::None);
        ensure_renderable(table, &columns)?;
        let mut keep = Vec::new();
        let rows: Vec<RowId> = table.row_ids().collect();
        for chunk in rows.chunks(CHUNK) {
            let requests = chunk
                .iter()
                .map(|&row| {
                    let context = render_document(table, row, &columns)?;
                    let claim = langex.render(table, row)?;
                    Ok(filter_request(&[&context], &claim, &opts.demonstrations))
                })
                .collect::<Result<Vec<_>>>()?;
            let answers = answer_labelled(session, op, &opts.model, &requests, false)?;
            keep.extend(
                chunk
                    .iter()
                    .zip(answers)
                    .filter(|(_, a)| a.label == Some(0))
                    .map(|(&row, _)| row),
            );
        }
        Ok(table.take(&keep))
    })
}
