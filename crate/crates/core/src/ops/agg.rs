//! Semantic aggregation: hierarchical reduction or a sequential fold, both
//! packing documents into context-sized prompts.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::cluster_rows;
use crate::langex::{Langex, Mode, Side};
use crate::lm::{LmBackend, LmRequest, Role};
use crate::ops::{ensure_new_column, ensure_renderable};
use crate::prompts::{render_document, AGG_LEAF_SYSTEM, AGG_MERGE_SYSTEM};
use crate::session::Session;
use crate::table::{partition_by_equality, Column, Kind, RowId, Table, Value};

pub const PARTITION_COLUMN: &str = "partition_id";
pub const DEFAULT_OUTPUT_COLUMN: &str = "_output";
pub const DEFAULT_MAX_CONTEXT_CHARS: usize = 32_768;
/// Characters held back from every prompt for the system text and headers.
pub const PROMPT_RESERVE: usize = 512;

const BLOCK_HEAD: &str = "---\n";
const BLOCK_OVERHEAD: usize = 5;
const ACC_HEAD: &str = "Current answer:\n";
const ACC_OVERHEAD: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggPattern {
    #[default]
    Hierarchical,
    Fold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggConfig {
    pub pattern: AggPattern,
    pub max_context_chars: usize,
    pub group_by: Vec<String>,
    /// Rows sharing a value here are reduced together before any cross-
    /// partition merge. `None` uses `partition_id` when the table has it.
    pub partition_column: Option<String>,
    pub backend: Option<String>,
    pub output_column: String,
}

impl Default for AggConfig {
    fn default() -> Self {
        Self {
            pattern: AggPattern::Hierarchical,
            max_context_chars: DEFAULT_MAX_CONTEXT_CHARS,
            group_by: Vec::new(),
            partition_column: None,
            backend: None,
            output_column: DEFAULT_OUTPUT_COLUMN.to_string(),
        }
    }
}

/// Room left for document blocks once the reserve and instruction are paid.
pub fn document_capacity(max_context_chars: usize, instruction: &str) -> Result<usize> {
    let fixed = PROMPT_RESERVE + instruction.chars().count();
    match max_context_chars.checked_sub(fixed) {
        Some(c) if c > BLOCK_OVERHEAD + ACC_OVERHEAD => Ok(c),
        _ => Err(Error::InvalidArgument(format!(
            "max_context_chars {max_context_chars} leaves no room for documents (need more than {})",
            fixed + BLOCK_OVERHEAD + ACC_OVERHEAD
        ))),
    }
}

fn block_len(text: &str) -> usize {
    text.chars().count() + BLOCK_OVERHEAD
}

fn truncate_chars(text: &str, n: usize) -> String {
    text.chars().take(n).collect()
}

/// Greedy packing of consecutive items into groups of total block length at
/// most `capacity`. Every item must fit on its own.
pub fn pack(lengths: &[usize], capacity: usize) -> Vec<std::ops::Range<usize>> {
    let mut packs = Vec::new();
    let mut start = 0;
    let mut used = 0;
    for (i, &len) in lengths.iter().enumerate() {
        if i > start && used + len > capacity {
            packs.push(start..i);
            start = i;
            used = 0;
        }
        used += len;
    }
    if start < lengths.len() {
        packs.push(start..lengths.len());
    }
    packs
}

fn user_prompt(instruction: &str, acc: Option<&str>, items: &[String]) -> String {
    let mut s = format!("Instruction: {instruction}\n\n");
    if let Some(acc) = acc {
        s.push_str(ACC_HEAD);
        s.push_str(acc);
        s.push_str("\n\n");
    }
    for item in items {
        s.push_str(BLOCK_HEAD);
        s.push_str(item);
        s.push('\n');
    }
    s
}

struct Reducer<'a> {
    session: &'a Session,
    op: &'a str,
    backend: &'a dyn LmBackend,
    instruction: String,
    capacity: usize,
}

impl Reducer<'_> {
    /// Partial answers are capped so any two fit one merge prompt; otherwise
    /// a level of full-size partials would never shrink.
    fn max_output(&self) -> usize {
        self.capacity / 2 - BLOCK_OVERHEAD
    }

    fn run(&self, requests: &[LmRequest]) -> Result<Vec<String>> {
        self.session
            .dispatch(self.op, Role::Single, self.backend, requests)
            .into_iter()
            .map(|r| {
                let text = r?.text.trim().to_string();
                if text.chars().count() > self.max_output() {
                    log::debug!("{}: truncating partial answer to {} chars", self.op, self.max_output());
                    Ok(truncate_chars(&text, self.max_output()))
                } else {
                    Ok(text)
                }
            })
            .collect()
    }

    fn request(&self, system: &'static str, acc: Option<&str>, items: &[String]) -> LmRequest {
        LmRequest::new(system, user_prompt(&self.instruction, acc, items)).with_max_output_chars(self.max_output())
    }

    /// Reduces each partition to one answer, then merges those answers.
    /// Every level is one batch.
    fn hierarchical(&self, partitions: Vec<Vec<String>>) -> Result<String> {
        let mut units = partitions;
        let mut leaf = true;
        loop {
            let mut requests = Vec::new();
            // per unit: None keeps it as is, Some(n) replaces it by the next n outputs
            let mut plan = Vec::with_capacity(units.len());
            for unit in &units {
                if !leaf && unit.len() == 1 {
                    plan.push(None);
                    continue;
                }
                let lengths: Vec<usize> = unit.iter().map(|t| block_len(t)).collect();
                let packs = pack(&lengths, self.capacity);
                plan.push(Some(packs.len()));
                let system = if leaf { AGG_LEAF_SYSTEM } else { AGG_MERGE_SYSTEM };
                requests.extend(packs.into_iter().map(|p| self.request(system, None, &unit[p])));
            }
            let mut outputs = self.run(&requests)?.into_iter();
            units = units
                .into_iter()
                .zip(plan)
                .map(|(unit, step)| match step {
                    None => unit,
                    Some(n) => outputs.by_ref().take(n).collect(),
                })
                .collect();
            leaf = false;
            if units.iter().all(|u| u.len() == 1) {
                if units.len() == 1 {
                    return Ok(units.remove(0).remove(0));
                }
                units = vec![units.into_iter().flatten().collect()];
            }
        }
    }

    /// Sequential fold: each call sees the running answer plus as many
    /// further documents as fit.
    fn fold(&self, docs: Vec<String>) -> Result<String> {
        let mut acc: Option<String> = None;
        let mut i = 0;
        while i < docs.len() {
            let first = block_len(&docs[i]);
            let allowed = (self.capacity - first).saturating_sub(ACC_OVERHEAD);
            let acc_text = acc.as_deref().map(|a| truncate_chars(a, allowed));
            let mut used = first + acc_text.as_deref().map_or(0, |a| a.chars().count() + ACC_OVERHEAD);
            let mut end = i + 1;
            while end < docs.len() && used + block_len(&docs[end]) <= self.capacity {
                used += block_len(&docs[end]);
                end += 1;
            }
            let system = if acc_text.is_some() { AGG_MERGE_SYSTEM } else { AGG_LEAF_SYSTEM };
            let req = self.request(system, acc_text.as_deref(), &docs[i..end]);
            acc = Some(self.run(std::slice::from_ref(&req))?.remove(0));
            i = end;
        }
        Ok(acc.unwrap_or_default())
    }
}

/// Aggregates all rows (or each `group_by` group) into one answer.
///
/// The result has the group columns (if any) plus `cfg.output_column`.
pub fn sem_agg(session: &Session, table: &Table, langex: &Langex, cfg: &AggConfig) -> Result<Table> {
    let op = session.op_label("sem_agg");
    session.timed(op, || {
        langex.validate(&table.schema(), None, Mode::Single)?;
        if cfg.group_by.iter().any(|g| g == &cfg.output_column) {
            return Err(Error::NameCollision(cfg.output_column.clone()));
        }
        let backend = session.backend(cfg.backend.as_deref())?;
        let columns = langex.columns(Side::None);
        ensure_renderable(table, &columns)?;
        let instruction = langex.instruction();
        let capacity = document_capacity(cfg.max_context_chars, &instruction)?;
        let partition = match &cfg.partition_column {
            Some(c) => Some(table.column(c)?),
            None => table.column(PARTITION_COLUMN).ok(),
        };

        let docs: Vec<String> = table
            .row_ids()
            .map(|r| {
                let doc = render_document(table, r, &columns)?;
                let chars = block_len(&doc);
                if chars > capacity {
                    return Err(Error::DocumentTooLong { row: r, chars, capacity });
                }
                Ok(doc)
            })
            .collect::<Result<_>>()?;

        let reducer = Reducer {
            session,
            op,
            backend: backend.as_ref(),
            instruction,
            capacity,
        };
        let groups = partition_by_equality(table, &cfg.group_by)?;
        let mut answers = Vec::with_capacity(groups.len());
        let mut firsts = Vec::with_capacity(groups.len());
        for (_, rows) in groups {
            if rows.is_empty() {
                answers.push(Value::Null);
                continue;
            }
            firsts.push(rows[0]);
            let mut parts: IndexMap<Option<String>, Vec<String>> = IndexMap::new();
            for &r in &rows {
                let key = partition.and_then(|c| c.values[r.0].render());
                parts.entry(key).or_default().push(docs[r.0].clone());
            }
            let answer = match cfg.pattern {
                AggPattern::Hierarchical => reducer.hierarchical(parts.into_values().collect())?,
                AggPattern::Fold => reducer.fold(parts.into_values().flatten().collect())?,
            };
            answers.push(Value::Text(answer));
        }

        let mut out: Vec<Column> = Vec::new();
        for g in &cfg.group_by {
            let col = table.column(g)?;
            out.push(Column::new(g.as_str(), col.kind, firsts.iter().map(|r| col.values[r.0].clone()).collect())?);
        }
        out.push(Column::new(cfg.output_column.as_str(), Kind::Text, answers)?);
        Ok(Table::new(out)?)
    })
}

/// How `sem_partition_by` assigns partition ids.
pub enum Partitioner<'a> {
    /// k-means over the index attached to `column`.
    Cluster { clusters: usize, column: String },
    Func(&'a dyn Fn(&Table, RowId) -> i64),
}

impl Partitioner<'_> {
    pub fn cluster(clusters: usize, column: &str) -> Self {
        Partitioner::Cluster {
            clusters,
            column: column.to_string(),
        }
    }
}

/// Appends an integer `partition_id` column for later aggregation.
pub fn sem_partition_by(session: &Session, table: &Table, partitioner: &Partitioner<'_>) -> Result<Table> {
    ensure_new_column(table, PARTITION_COLUMN)?;
    let ids: Vec<i64> = match partitioner {
        Partitioner::Cluster { clusters, column } => cluster_rows(session, table, column, *clusters)?
            .0
            .into_iter()
            .map(|c| c as i64)
            .collect(),
        Partitioner::Func(f) => table.row_ids().map(|r| f(table, r)).collect(),
    };
    Ok(table.with_column(Column::int(PARTITION_COLUMN, ids))?)
}
