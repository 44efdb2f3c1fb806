//! Semantic joins: exhaustive nested loop and the two index-pruned variants.

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::nearest_rows;
use crate::langex::{Langex, Mode, Side};
use crate::lm::{Demonstration, LmRequest, Role};
use crate::ops::filter::{filter_request, CHUNK};
use crate::ops::{answer_labelled, ensure_renderable, ModelChoice};
use crate::prompts::{map_user, render_document, MAP_SYSTEM};
use crate::session::Session;
use crate::table::{join_rows, RowId, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JoinPattern {
    /// Every (left, right) pair goes to the model.
    NestedLoop,
    /// Index search on the raw left key proposes right candidates.
    SearchFilter,
    /// The model first rewrites each left key into a likely right key, which
    /// is then used as the search query.
    MapSearchFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinType {
    #[default]
    Inner,
    Left,
    Right,
    Outer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinConfig {
    pub pattern: JoinPattern,
    /// Hard cap on LM calls; required by the index-pruned patterns.
    pub call_budget: Option<u64>,
    pub map_demos: Vec<Demonstration>,
    pub how: JoinType,
    /// Left column used as the search query; defaults to the first left
    /// placeholder.
    pub left_on: Option<String>,
    /// Indexed right column; defaults to the first right placeholder.
    pub right_on: Option<String>,
    pub model: ModelChoice,
    /// Backend for the rewrite step; session default when `None`.
    pub map_backend: Option<String>,
}

impl JoinConfig {
    pub fn new(pattern: JoinPattern) -> Self {
        Self {
            pattern,
            call_budget: None,
            map_demos: Vec::new(),
            how: JoinType::Inner,
            left_on: None,
            right_on: None,
            model: ModelChoice::Default,
            map_backend: None,
        }
    }

    pub fn budget(mut self, calls: u64) -> Self {
        self.call_budget = Some(calls);
        self
    }
}

/// Candidates per left row for a pruned join, given the budget.
///
/// Returns `(k, fixed_calls)` where `fixed_calls` are spent before filtering.
pub fn candidate_allowance(pattern: JoinPattern, budget: u64, left_rows: u64, calls_per_candidate: u64) -> Result<(u64, u64)> {
    let n1 = left_rows.max(1);
    let (fixed, needed) = match pattern {
        JoinPattern::NestedLoop => return Err(Error::InvalidArgument("nested loop has no candidate allowance".into())),
        JoinPattern::SearchFilter => (0, n1 * calls_per_candidate),
        JoinPattern::MapSearchFilter => (left_rows, left_rows + n1 * calls_per_candidate),
    };
    if budget < needed {
        return Err(Error::BudgetInfeasible { budget, needed });
    }
    Ok(((budget - fixed) / (n1 * calls_per_candidate), fixed))
}

struct Docs {
    left: Vec<String>,
    right: Vec<String>,
}

fn docs(left: &Table, right: &Table, langex: &Langex) -> Result<Docs> {
    let (lc, rc) = (langex.columns(Side::Left), langex.columns(Side::Right));
    ensure_renderable(left, &lc)?;
    ensure_renderable(right, &rc)?;
    Ok(Docs {
        left: left.row_ids().map(|r| render_document(left, r, &lc)).collect::<std::result::Result<_, _>>()?,
        right: right.row_ids().map(|r| render_document(right, r, &rc)).collect::<std::result::Result<_, _>>()?,
    })
}

fn judge_pairs(
    session: &Session,
    op: &str,
    model: &ModelChoice,
    left: &Table,
    right: &Table,
    langex: &Langex,
    docs: &Docs,
    pairs: &[(RowId, RowId)],
) -> Result<Vec<(RowId, RowId)>> {
    let template = langex.pair_template(left, right)?;
    let mut matched = Vec::new();
    for chunk in pairs.chunks(CHUNK) {
        let requests: Vec<LmRequest> = chunk
            .iter()
            .map(|&(l, r)| {
                filter_request(&[&docs.left[l.0], &docs.right[r.0]], &template.render(l, r), &[])
            })
            .collect();
        let answers = answer_labelled(session, op, model, &requests, false)?;
        matched.extend(chunk.iter().zip(answers).filter(|(_, a)| a.label == Some(0)).map(|(&p, _)| p));
    }
    Ok(matched)
}

fn default_column(given: &Option<String>, langex: &Langex, side: Side) -> Result<String> {
    match given {
        Some(c) => Ok(c.clone()),
        None => langex
            .columns(side)
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("no {side:?} placeholder to search on"))),
    }
}

/// Instruction for the rewrite step of map-search-filter.
pub fn rewrite_instruction(langex: &Langex, right_on: &str) -> String {
    format!(
        "Write the {right_on} most likely to satisfy this condition for the record above: {}",
        langex.instruction()
    )
}

fn shape(matches: &[(RowId, RowId)], left: &Table, right: &Table, how: JoinType) -> Vec<(Option<RowId>, Option<RowId>)> {
    let mut out = Vec::with_capacity(matches.len());
    let mut by_left = vec![Vec::new(); left.row_count()];
    let mut right_hit = vec![false; right.row_count()];
    for &(l, r) in matches {
        by_left[l.0].push(r);
        right_hit[r.0] = true;
    }
    let keep_left = matches!(how, JoinType::Left | JoinType::Outer);
    for (l, rs) in by_left.iter().enumerate() {
        if rs.is_empty() && keep_left {
            out.push((Some(RowId(l)), None));
        }
        out.extend(rs.iter().map(|&r| (Some(RowId(l)), Some(r))));
    }
    if matches!(how, JoinType::Right | JoinType::Outer) {
        out.extend(right_hit.iter().enumerate().filter(|(_, hit)| !**hit).map(|(r, _)| (None, Some(RowId(r)))));
    }
    out
}

/// Joins `left` and `right` on a natural-language predicate over both.
/// Output columns are the left columns then the right ones, colliding names
/// suffixed `:left` / `:right`. Matches are ordered by left then right row.
pub fn sem_join(session: &Session, left: &Table, right: &Table, langex: &Langex, cfg: &JoinConfig) -> Result<Table> {
    let op = session.op_label("sem_join");
    session.timed(op, || {
        langex.validate(&left.schema(), Some(&right.schema()), Mode::Join)?;
        cfg.model.check(session)?;
        let docs = docs(left, right, langex)?;
        let (n1, n2) = (left.row_count(), right.row_count());

        let mut matches = if n1 == 0 || n2 == 0 {
            Vec::new()
        } else {
            match cfg.pattern {
                JoinPattern::NestedLoop => {
                    if let Some(budget) = cfg.call_budget {
                        let needed = (n1 * n2) as u64 * cfg.model.worst_case_calls();
                        if budget < needed {
                            return Err(Error::BudgetInfeasible { budget, needed });
                        }
                    }
                    let mut matched = Vec::new();
                    // left-major chunks keep memory flat on large products
                    let rows_per_chunk = (CHUNK / n2).max(1);
                    for start in (0..n1).step_by(rows_per_chunk) {
                        let pairs: Vec<(RowId, RowId)> = (start..(start + rows_per_chunk).min(n1))
                            .flat_map(|l| (0..n2).map(move |r| (RowId(l), RowId(r))))
                            .collect();
                        matched.extend(judge_pairs(session, op, &cfg.model, left, right, langex, &docs, &pairs)?);
                    }
                    matched
                }
                JoinPattern::SearchFilter | JoinPattern::MapSearchFilter => {
                    let budget = cfg.call_budget.ok_or_else(|| {
                        Error::InvalidArgument(format!("{:?} join needs a call budget", cfg.pattern))
                    })?;
                    let (k, fixed) =
                        candidate_allowance(cfg.pattern, budget, n1 as u64, cfg.model.worst_case_calls())?;
                    let k = (k as usize).min(n2);
                    let left_on = default_column(&cfg.left_on, langex, Side::Left)?;
                    let right_on = default_column(&cfg.right_on, langex, Side::Right)?;
                    let raw: Vec<&str> = left.text_column(&left_on)?;
                    let queries: Vec<String> = if cfg.pattern == JoinPattern::MapSearchFilter {
                        let backend = session.backend(cfg.map_backend.as_deref())?;
                        let instruction = rewrite_instruction(langex, &right_on);
                        let requests: Vec<LmRequest> = docs
                            .left
                            .iter()
                            .map(|d| {
                                LmRequest::new(MAP_SYSTEM, map_user(d, &instruction))
                                    .with_demonstrations(&cfg.map_demos)
                                    .with_max_output_chars(512)
                            })
                            .collect();
                        session
                            .dispatch(op, Role::Single, backend.as_ref(), &requests)
                            .into_iter()
                            .zip(&raw)
                            .map(|(r, fallback)| match r {
                                Ok(r) if !r.text.trim().is_empty() => r.text.trim().to_string(),
                                _ => fallback.to_string(),
                            })
                            .collect()
                    } else {
                        raw.iter().map(|s| s.to_string()).collect()
                    };
                    let query_refs: Vec<&str> = queries.iter().map(String::as_str).collect();
                    let hits = nearest_rows(session, right, &right_on, &query_refs, k)?;
                    let mut candidates: IndexSet<(RowId, RowId)> = IndexSet::new();
                    for (l, row_hits) in hits.iter().enumerate() {
                        candidates.extend(row_hits.iter().map(|&(r, _)| (RowId(l), r)));
                    }
                    let candidates: Vec<(RowId, RowId)> = candidates.into_iter().collect();
                    debug_assert!(fixed + candidates.len() as u64 * cfg.model.worst_case_calls() <= budget);
                    judge_pairs(session, op, &cfg.model, left, right, langex, &docs, &candidates)?
                }
            }
        };
        matches.sort();
        Ok(join_rows(left, right, &shape(&matches, left, right, cfg.how))?)
    })
}
