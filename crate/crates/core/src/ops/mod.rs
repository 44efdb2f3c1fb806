//! Semantic operators.

pub mod agg;
pub mod filter;
pub mod join;
pub mod map;
pub mod topk;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{decide, LmRequest, Role};
use crate::session::Session;
use crate::table::Table;

/// Two-tier routing: `proxy` answers first, items whose label confidence is
/// below `threshold` go to `oracle`, whose answer is final.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub proxy: String,
    pub oracle: String,
    pub threshold: f64,
}

impl CascadeConfig {
    pub fn new(proxy: &str, oracle: &str, threshold: f64) -> Self {
        Self {
            proxy: proxy.to_string(),
            oracle: oracle.to_string(),
            threshold,
        }
    }

    /// A threshold of 1 sends everything to the oracle, 0 nothing.
    pub fn escalates(&self, confidence: f64) -> bool {
        self.threshold >= 1.0 || confidence < self.threshold
    }
}

/// Which model(s) answer an operator's labelled questions.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ModelChoice {
    /// One backend; `None` picks the session default.
    #[default]
    Default,
    Backend(String),
    Cascade(CascadeConfig),
}

impl ModelChoice {
    pub fn backend(id: &str) -> Self {
        ModelChoice::Backend(id.to_string())
    }

    pub fn cascade(proxy: &str, oracle: &str, threshold: f64) -> Self {
        ModelChoice::Cascade(CascadeConfig::new(proxy, oracle, threshold))
    }

    /// LM calls per question in the worst case.
    pub fn worst_case_calls(&self) -> u64 {
        match self {
            ModelChoice::Cascade(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn check(&self, session: &Session) -> Result<()> {
        match self {
            ModelChoice::Default => session.backend(None).map(drop),
            ModelChoice::Backend(id) => session.backend(Some(id)).map(drop),
            ModelChoice::Cascade(c) => {
                if !(0.0..=1.0).contains(&c.threshold) {
                    return Err(Error::InvalidArgument(format!(
                        "confidence threshold {} outside [0, 1]",
                        c.threshold
                    )));
                }
                session.backend(Some(&c.proxy))?;
                session.backend(Some(&c.oracle)).map(drop)
            }
        }
    }
}

/// Final answer for one labelled question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Answer {
    /// Label index, `None` when the final output matched no label.
    pub label: Option<usize>,
    pub role: Role,
}

fn run_stage(
    session: &Session,
    op: &str,
    role: Role,
    backend_id: Option<&str>,
    requests: &[LmRequest],
    retry_malformed: bool,
) -> Result<Vec<(Option<usize>, f64)>> {
    let backend = session.backend(backend_id)?;
    let judge = |results: Vec<std::result::Result<crate::lm::LmResult, crate::lm::LmError>>, reqs: &[LmRequest]| {
        results
            .into_iter()
            .zip(reqs)
            .map(|(r, req)| match r {
                Ok(r) => {
                    let labels = req.label_set.as_deref().unwrap_or_default();
                    let d = decide(&r, labels);
                    (d.label, d.confidence)
                }
                Err(_) => (None, 0.0),
            })
            .collect::<Vec<_>>()
    };
    let mut out = judge(session.dispatch(op, role, backend.as_ref(), requests), requests);
    let malformed: Vec<usize> = (0..out.len()).filter(|&i| out[i].0.is_none()).collect();
    if !malformed.is_empty() {
        session
            .meter()
            .update(op, |c| c.malformed_outputs += malformed.len() as u64);
        if retry_malformed {
            let again: Vec<LmRequest> = malformed.iter().map(|&i| requests[i].clone()).collect();
            let retried = judge(session.dispatch(op, role, backend.as_ref(), &again), &again);
            let still = retried.iter().filter(|d| d.0.is_none()).count() as u64;
            if still > 0 {
                session.meter().update(op, |c| c.malformed_outputs += still);
            }
            for (&i, d) in malformed.iter().zip(retried) {
                out[i] = d;
            }
        }
    }
    Ok(out)
}

/// Sends labelled requests through the chosen model(s).
pub(crate) fn answer_labelled(
    session: &Session,
    op: &str,
    model: &ModelChoice,
    requests: &[LmRequest],
    retry_malformed: bool,
) -> Result<Vec<Answer>> {
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    match model {
        ModelChoice::Default | ModelChoice::Backend(_) => {
            let id = match model {
                ModelChoice::Backend(id) => Some(id.as_str()),
                _ => None,
            };
            Ok(run_stage(session, op, Role::Single, id, requests, retry_malformed)?
                .into_iter()
                .map(|(label, _)| Answer {
                    label,
                    role: Role::Single,
                })
                .collect())
        }
        ModelChoice::Cascade(cfg) => {
            let proxy = run_stage(session, op, Role::Proxy, Some(&cfg.proxy), requests, false)?;
            let escalate: Vec<usize> = (0..proxy.len()).filter(|&i| cfg.escalates(proxy[i].1)).collect();
            let mut answers: Vec<Answer> = proxy
                .iter()
                .map(|&(label, _)| Answer {
                    label,
                    role: Role::Proxy,
                })
                .collect();
            if !escalate.is_empty() {
                let sub: Vec<LmRequest> = escalate.iter().map(|&i| requests[i].clone()).collect();
                let oracle = run_stage(session, op, Role::Oracle, Some(&cfg.oracle), &sub, retry_malformed)?;
                for (&i, (label, _)) in escalate.iter().zip(oracle) {
                    answers[i] = Answer {
                        label,
                        role: Role::Oracle,
                    };
                }
            }
            Ok(answers)
        }
    }
}

/// Fails with the first null among `columns` so no LM call is wasted on a
/// table that cannot be rendered.
pub(crate) fn ensure_renderable(table: &Table, columns: &[String]) -> Result<()> {
    for name in columns {
        let col = table.column(name)?;
        if let Some(row) = col.values.iter().position(|v| v.is_null()) {
            return Err(crate::langex::LangexError::NullCell {
                column: name.clone(),
                row: crate::table::RowId(row),
            }
            .into());
        }
    }
    Ok(())
}

pub(crate) fn ensure_new_column(table: &Table, name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidArgument("empty column name".into()));
    }
    if table.column_index(name).is_some() {
        return Err(Error::NameCollision(name.to_string()));
    }
    Ok(())
}
