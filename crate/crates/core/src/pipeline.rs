//! Declarative pipelines: a TOML document naming inputs, models and an
//! ordered list of operators.
//!
//! ```toml
//! output = "result.csv"
//!
//! [embedder]
//! dimension = 256
//!
//! [[inputs]]
//! name = "claims"
//! path = "claims.csv"
//!
//! [[backends]]
//! id = "mock"
//! kind = "scripted"
//! default = "False"
//! rules = [{ contains = "Paris", answer = "True" }]
//!
//! [[ops]]
//! op = "sem_filter"
//! langex = "{claim} is about a capital city"
//! ```
//!
//! Each op reads the previous op's result (initially the first input) unless
//! it names an `input`, and can store its result under `save_as`. Relative
//! paths resolve against the pipeline file's directory.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::Error;
use crate::index::{
    load_sem_index, sem_cluster_by, sem_index, sem_search, sem_sim_join, HashEmbedder, OverlapReranker, SearchOptions,
    CENTROID_SCORE_COLUMN, CLUSTER_COLUMN, RERANK_SCORE_COLUMN, SCORE_COLUMN,
};
use crate::langex::{Langex, Mode};
use crate::lm::http::{HttpBackend, HttpConfig};
use crate::lm::mock::{EchoBackend, KeyedBackend, KeyedOracleConfig, ScriptedBackend};
use crate::lm::{Demonstration, LmBackend, OpCounters, RetryPolicy};
use crate::ops::agg::{sem_agg, sem_partition_by, AggConfig, AggPattern, Partitioner, DEFAULT_MAX_CONTEXT_CHARS, DEFAULT_OUTPUT_COLUMN, PARTITION_COLUMN};
use crate::ops::filter::{sem_filter, FilterOptions};
use crate::ops::join::{sem_join, JoinConfig, JoinPattern, JoinType};
use crate::ops::map::{sem_extract, sem_map, MapOptions};
use crate::ops::topk::{sem_topk, Algorithm, PivotStrategy, TopkConfig};
use crate::ops::{CascadeConfig, ModelChoice};
use crate::session::{Session, DEFAULT_PARALLELISM};
use crate::table::{join_column_names, load_csv, partition_by_equality, write_csv, Column, Kind, Schema, Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub inputs: Vec<InputSpec>,
    #[serde(default)]
    pub backends: Vec<BackendSpec>,
    #[serde(default)]
    pub embedder: Option<EmbedderSpec>,
    #[serde(default)]
    pub reranker: bool,
    #[serde(default)]
    pub ops: Vec<OpSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub indexes: Vec<IndexRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexRef {
    pub column: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderSpec {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dimension() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub contains: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// Fixed answers chosen by substring rules.
    Scripted {
        #[serde(default)]
        default: String,
        #[serde(default)]
        rules: Vec<Rule>,
    },
    Echo,
    /// Hidden-key oracle over the text cells of `input`.
    Keyed {
        input: String,
        key_column: String,
        #[serde(default)]
        temperature: f64,
        #[serde(default)]
        seed: u64,
        /// Filters answer true when the key exceeds this value.
        #[serde(default)]
        filter_above: Option<f64>,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: BackendKind,
}

/// Model selection shared by the labelled operators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub cascade: Option<CascadeConfig>,
}

impl ModelSpec {
    fn choice(&self) -> ModelChoice {
        match (&self.cascade, &self.backend) {
            (Some(c), _) => ModelChoice::Cascade(c.clone()),
            (None, Some(b)) => ModelChoice::Backend(b.clone()),
            (None, None) => ModelChoice::Default,
        }
    }

    fn backend_ids(&self) -> Vec<Option<&str>> {
        match &self.cascade {
            Some(c) => vec![Some(&c.proxy), Some(&c.oracle)],
            None => vec![self.backend.as_deref()],
        }
    }
}

fn default_separator() -> String {
    "\n".into()
}

fn default_pivot() -> String {
    "random".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    SemFilter {
        langex: String,
        #[serde(flatten)]
        model: ModelSpec,
        #[serde(default)]
        demonstrations: Vec<Demonstration>,
    },
    SemMap {
        langex: String,
        name: String,
        #[serde(default)]
        backend: Option<String>,
        #[serde(default)]
        demonstrations: Vec<Demonstration>,
    },
    SemExtract {
        langex: String,
        name: String,
        #[serde(default)]
        backend: Option<String>,
    },
    SemTopk {
        langex: String,
        k: usize,
        #[serde(default = "default_algorithm")]
        algorithm: Algorithm,
        /// `random` or `sem_index`.
        #[serde(default = "default_pivot")]
        pivot: String,
        #[serde(default)]
        epsilon: Option<usize>,
        #[serde(default)]
        pivot_seed: u64,
        #[serde(default)]
        group_by: Vec<String>,
        #[serde(flatten)]
        model: ModelSpec,
    },
    SemJoin {
        right: String,
        langex: String,
        pattern: JoinPattern,
        #[serde(default)]
        budget: Option<u64>,
        #[serde(default)]
        how: JoinType,
        #[serde(default)]
        left_on: Option<String>,
        #[serde(default)]
        right_on: Option<String>,
        #[serde(default)]
        map_backend: Option<String>,
        #[serde(default)]
        map_demos: Vec<Demonstration>,
        #[serde(flatten)]
        model: ModelSpec,
    },
    SemAgg {
        langex: String,
        #[serde(default)]
        pattern: AggPattern,
        #[serde(default = "default_max_context")]
        max_context_chars: usize,
        #[serde(default)]
        group_by: Vec<String>,
        #[serde(default)]
        partition_column: Option<String>,
        #[serde(default)]
        backend: Option<String>,
        #[serde(default = "default_output_column")]
        output_column: String,
    },
    SemIndex {
        column: String,
        dir: PathBuf,
    },
    LoadIndex {
        column: String,
        dir: PathBuf,
    },
    SemSearch {
        column: String,
        query: String,
        k: usize,
        #[serde(default)]
        n_rerank: Option<usize>,
        #[serde(default)]
        return_scores: bool,
    },
    SemSimJoin {
        right: String,
        left_on: String,
        right_on: String,
        k: usize,
        #[serde(default)]
        return_scores: bool,
    },
    SemClusterBy {
        column: String,
        clusters: usize,
        #[serde(default)]
        return_scores: bool,
    },
    SemPartitionBy {
        column: String,
        clusters: usize,
    },
    /// Collapses rows sharing `by`, joining `column` values with `separator`.
    GroupConcat {
        by: Vec<String>,
        column: String,
        #[serde(default = "default_separator")]
        separator: String,
    },
}

fn default_algorithm() -> Algorithm {
    Algorithm::Quickselect
}

fn default_max_context() -> usize {
    DEFAULT_MAX_CONTEXT_CHARS
}

fn default_output_column() -> String {
    DEFAULT_OUTPUT_COLUMN.into()
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::SemFilter { .. } => "sem_filter",
            OpKind::SemMap { .. } => "sem_map",
            OpKind::SemExtract { .. } => "sem_extract",
            OpKind::SemTopk { .. } => "sem_topk",
            OpKind::SemJoin { .. } => "sem_join",
            OpKind::SemAgg { .. } => "sem_agg",
            OpKind::SemIndex { .. } => "sem_index",
            OpKind::LoadIndex { .. } => "load_index",
            OpKind::SemSearch { .. } => "sem_search",
            OpKind::SemSimJoin { .. } => "sem_sim_join",
            OpKind::SemClusterBy { .. } => "sem_cluster_by",
            OpKind::SemPartitionBy { .. } => "sem_partition_by",
            OpKind::GroupConcat { .. } => "group_concat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpSpec {
    #[serde(flatten)]
    pub kind: OpKind,
    #[serde(default)]
    pub input: Option<String>,
    #[serde(default)]
    pub save_as: Option<String>,
}

/// Per-op counters keyed `"{n}:{op}"`, totals and result sizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunMetrics {
    pub ops: IndexMap<String, OpCounters>,
    pub rows: IndexMap<String, usize>,
    pub total: OpCounters,
    pub wall_time_ms: f64,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("pipeline file: {0}")]
    Parse(String),
    #[error("input {name:?}: {source}")]
    Input { name: String, source: Error },
    #[error("op {op} ({name}): {reason}")]
    Validation { op: usize, name: &'static str, reason: String },
    #[error("op {op} ({name}) failed: {source}")]
    Runtime {
        op: usize,
        name: &'static str,
        source: Error,
        metrics: Box<RunMetrics>,
    },
    #[error("writing output: {0}")]
    Output(Error),
}

impl PipelineError {
    /// Configuration problems detected before any LM call.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Parse(_) | PipelineError::Input { .. } | PipelineError::Validation { .. }
        )
    }

    pub fn metrics(&self) -> Option<&RunMetrics> {
        match self {
            PipelineError::Runtime { metrics, .. } => Some(metrics),
            _ => None,
        }
    }
}

impl PipelineSpec {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Parse(e.to_string()))
    }
}

/// A parsed spec plus the directory its relative paths resolve against.
pub struct Pipeline {
    pub spec: PipelineSpec,
    pub base_dir: PathBuf,
}

impl Pipeline {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Parse(format!("{}: {e}", path.display())))?;
        Ok(Self {
            spec: PipelineSpec::from_toml(&text)?,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn new(spec: PipelineSpec, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            spec,
            base_dir: base_dir.into(),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Schema plus the set of indexed columns, tracked through validation.
#[derive(Debug, Clone)]
struct Shape {
    schema: Schema,
    indexed: BTreeSet<String>,
}

impl Shape {
    fn of(table: &Table) -> Self {
        Self {
            schema: table.schema(),
            indexed: table.indices().keys().cloned().collect(),
        }
    }

    fn with(&self, extra: &[(&str, Kind)]) -> Result<Self, String> {
        let mut fields: Vec<(String, Kind)> = self.schema.fields.iter().map(|f| (f.name.clone(), f.kind)).collect();
        for (name, kind) in extra {
            if self.schema.contains(name) {
                return Err(format!("column {name:?} already exists"));
            }
            fields.push((name.to_string(), *kind));
        }
        Ok(Self {
            schema: Schema::new(fields),
            indexed: self.indexed.clone(),
        })
    }
}

fn join_shape(left: &Shape, right: &Shape, extra: &[(&str, Kind)]) -> Result<Shape, String> {
    let (ln, rn) = join_column_names(&left.schema, &right.schema);
    let mut fields = Vec::new();
    let mut indexed = BTreeSet::new();
    for (names, shape) in [(&ln, left), (&rn, right)] {
        for (name, f) in names.iter().zip(&shape.schema.fields) {
            fields.push((name.clone(), f.kind));
            if shape.indexed.contains(&f.name) {
                indexed.insert(name.clone());
            }
        }
    }
    let out = Shape {
        schema: Schema::new(fields),
        indexed,
    };
    out.with(extra)
}

fn require_columns(schema: &Schema, cols: &[String]) -> Result<(), String> {
    for c in cols {
        if !schema.contains(c) {
            return Err(format!("unknown column {c:?}"));
        }
    }
    Ok(())
}

fn require_text(schema: &Schema, col: &str) -> Result<(), String> {
    match schema.kind_of(col) {
        None => Err(format!("unknown column {col:?}")),
        Some(Kind::Text) => Ok(()),
        Some(k) => Err(format!("column {col:?} is {k:?}, expected text")),
    }
}

fn require_index(shape: &Shape, col: &str) -> Result<(), String> {
    if shape.indexed.contains(col) {
        Ok(())
    } else {
        Err(format!("column {col:?} has no similarity index"))
    }
}

struct Validator<'a> {
    backends: &'a [BackendSpec],
    has_embedder: bool,
    has_reranker: bool,
}

impl Validator<'_> {
    fn backend(&self, id: Option<&str>) -> Result<(), String> {
        match id {
            None if self.backends.is_empty() => Err("no backend configured".into()),
            None => Ok(()),
            Some(id) if self.backends.iter().any(|b| b.id == id) => Ok(()),
            Some(id) => Err(format!("unknown backend {id:?}")),
        }
    }

    fn embedder(&self) -> Result<(), String> {
        if self.has_embedder {
            Ok(())
        } else {
            Err("no embedder configured".into())
        }
    }

    fn langex(&self, src: &str, left: &Schema, right: Option<&Schema>, mode: Mode) -> Result<Langex, String> {
        let l = Langex::parse(src).map_err(|e| format!("langex {src:?}: {e}"))?;
        l.validate(left, right, mode).map_err(|e| format!("langex {src:?}: {e}"))?;
        Ok(l)
    }

    fn model(&self, m: &ModelSpec) -> Result<(), String> {
        if let Some(c) = &m.cascade {
            if !(0.0..=1.0).contains(&c.threshold) {
                return Err(format!("cascade threshold {} outside [0, 1]", c.threshold));
            }
        }
        m.backend_ids().into_iter().try_for_each(|b| self.backend(b))
    }

    /// Output shape of `op` applied to `cur`.
    fn step(&self, op: &OpKind, cur: &Shape, tables: &HashMap<String, Shape>) -> Result<Shape, String> {
        let right_of = |name: &str| tables.get(name).cloned().ok_or_else(|| format!("unknown table {name:?}"));
        match op {
            OpKind::SemFilter { langex, model, .. } => {
                self.langex(langex, &cur.schema, None, Mode::Single)?;
                self.model(model)?;
                Ok(cur.clone())
            }
            OpKind::SemMap { langex, name, backend, .. } | OpKind::SemExtract { langex, name, backend } => {
                self.langex(langex, &cur.schema, None, Mode::Single)?;
                self.backend(backend.as_deref())?;
                cur.with(&[(name, Kind::Text)])
            }
            OpKind::SemTopk {
                langex,
                k,
                pivot,
                group_by,
                model,
                ..
            } => {
                let l = self.langex(langex, &cur.schema, None, Mode::Single)?;
                if *k == 0 {
                    return Err("k must be at least 1".into());
                }
                require_columns(&cur.schema, group_by)?;
                self.model(model)?;
                match pivot.as_str() {
                    "random" => {}
                    "sem_index" => {
                        self.embedder()?;
                        if !l.columns(crate::langex::Side::None).iter().any(|c| cur.indexed.contains(c)) {
                            return Err("sem_index pivot needs an index on a referenced column".into());
                        }
                    }
                    other => return Err(format!("unknown pivot strategy {other:?}")),
                }
                Ok(cur.clone())
            }
            OpKind::SemJoin {
                right,
                langex,
                pattern,
                budget,
                left_on,
                right_on,
                map_backend,
                model,
                ..
            } => {
                let r = right_of(right)?;
                let l = self.langex(langex, &cur.schema, Some(&r.schema), Mode::Join)?;
                self.model(model)?;
                if *pattern != JoinPattern::NestedLoop {
                    if budget.is_none() {
                        return Err(format!("{pattern:?} join needs a budget"));
                    }
                    self.embedder()?;
                    let lcol = left_on
                        .clone()
                        .or_else(|| l.columns(crate::langex::Side::Left).into_iter().next());
                    let rcol = right_on
                        .clone()
                        .or_else(|| l.columns(crate::langex::Side::Right).into_iter().next());
                    let (Some(lcol), Some(rcol)) = (lcol, rcol) else {
                        return Err("cannot tell which columns to search on".into());
                    };
                    require_text(&cur.schema, &lcol)?;
                    require_index(&r, &rcol)?;
                    if *pattern == JoinPattern::MapSearchFilter {
                        self.backend(map_backend.as_deref())?;
                    }
                }
                join_shape(cur, &r, &[])
            }
            OpKind::SemAgg {
                langex,
                group_by,
                partition_column,
                backend,
                output_column,
                ..
            } => {
                self.langex(langex, &cur.schema, None, Mode::Single)?;
                self.backend(backend.as_deref())?;
                require_columns(&cur.schema, group_by)?;
                if let Some(p) = partition_column {
                    require_columns(&cur.schema, std::slice::from_ref(p))?;
                }
                if group_by.contains(output_column) {
                    return Err(format!("column {output_column:?} already exists"));
                }
                let mut fields: Vec<(String, Kind)> = group_by
                    .iter()
                    .map(|g| (g.clone(), cur.schema.kind_of(g).expect("checked")))
                    .collect();
                fields.push((output_column.clone(), Kind::Text));
                Ok(Shape {
                    schema: Schema::new(fields),
                    indexed: BTreeSet::new(),
                })
            }
            OpKind::SemIndex { column, .. } | OpKind::LoadIndex { column, .. } => {
                require_text(&cur.schema, column)?;
                if matches!(op, OpKind::SemIndex { .. }) {
                    self.embedder()?;
                }
                let mut out = cur.clone();
                out.indexed.insert(column.clone());
                Ok(out)
            }
            OpKind::SemSearch {
                column,
                k,
                n_rerank,
                return_scores,
                ..
            } => {
                self.embedder()?;
                require_index(cur, column)?;
                if *k == 0 {
                    return Err("K must be at least 1".into());
                }
                let mut extra = Vec::new();
                if let Some(n) = n_rerank {
                    if n > k {
                        return Err(format!("n_rerank {n} exceeds K {k}"));
                    }
                    if !self.has_reranker {
                        return Err("n_rerank requires a reranker".into());
                    }
                }
                if *return_scores {
                    extra.push((SCORE_COLUMN, Kind::Float));
                    if n_rerank.is_some() {
                        extra.push((RERANK_SCORE_COLUMN, Kind::Float));
                    }
                }
                cur.with(&extra)
            }
            OpKind::SemSimJoin {
                right,
                left_on,
                right_on,
                k,
                return_scores,
            } => {
                self.embedder()?;
                let r = right_of(right)?;
                require_text(&cur.schema, left_on)?;
                require_index(&r, right_on)?;
                if *k == 0 {
                    return Err("K must be at least 1".into());
                }
                let extra: &[(&str, Kind)] = if *return_scores { &[(SCORE_COLUMN, Kind::Float)] } else { &[] };
                join_shape(cur, &r, extra)
            }
            OpKind::SemClusterBy {
                column,
                clusters,
                return_scores,
            } => {
                require_index(cur, column)?;
                if *clusters == 0 {
                    return Err("cluster count must be at least 1".into());
                }
                let mut extra = vec![(CLUSTER_COLUMN, Kind::Int)];
                if *return_scores {
                    extra.push((CENTROID_SCORE_COLUMN, Kind::Float));
                }
                cur.with(&extra)
            }
            OpKind::SemPartitionBy { column, clusters } => {
                require_index(cur, column)?;
                if *clusters == 0 {
                    return Err("cluster count must be at least 1".into());
                }
                cur.with(&[(PARTITION_COLUMN, Kind::Int)])
            }
            OpKind::GroupConcat { by, column, .. } => {
                require_columns(&cur.schema, by)?;
                require_columns(&cur.schema, std::slice::from_ref(column))?;
                if by.contains(column) {
                    return Err(format!("column {column:?} is also a group key"));
                }
                let mut fields: Vec<(String, Kind)> = by
                    .iter()
                    .map(|g| (g.clone(), cur.schema.kind_of(g).expect("checked")))
                    .collect();
                fields.push((column.clone(), Kind::Text));
                Ok(Shape {
                    schema: Schema::new(fields),
                    indexed: BTreeSet::new(),
                })
            }
        }
    }
}

/// Rows grouped by `by`; `column` rendered and joined with `separator`.
pub fn group_concat(table: &Table, by: &[String], column: &str, separator: &str) -> crate::Result<Table> {
    let groups = partition_by_equality(table, by)?;
    let col = table.column(column)?;
    let groups: Vec<_> = groups.into_iter().filter(|(_, rows)| !rows.is_empty()).collect();
    let mut out = Vec::new();
    for g in by {
        let c = table.column(g)?;
        out.push(Column::new(
            g.as_str(),
            c.kind,
            groups.iter().map(|(_, rows)| c.values[rows[0].0].clone()).collect(),
        )?);
    }
    let joined = groups
        .iter()
        .map(|(_, rows)| {
            let parts: Vec<String> = rows.iter().filter_map(|r| col.values[r.0].render()).collect();
            Value::Text(parts.join(separator))
        })
        .collect();
    out.push(Column::new(column, Kind::Text, joined)?);
    Ok(Table::new(out)?)
}

fn build_backend(spec: &BackendSpec, tables: &HashMap<String, Table>) -> crate::Result<Arc<dyn LmBackend>> {
    Ok(match &spec.kind {
        BackendKind::Scripted { default, rules } => {
            let mut b = ScriptedBackend::new(&spec.id, default.clone());
            for r in rules {
                b = b.rule(r.contains.clone(), r.answer.clone());
            }
            Arc::new(b)
        }
        BackendKind::Echo => Arc::new(EchoBackend::new(&spec.id)),
        BackendKind::Keyed {
            input,
            key_column,
            temperature,
            seed,
            filter_above,
        } => {
            let table = tables
                .get(input)
                .ok_or_else(|| Error::InvalidArgument(format!("keyed backend {:?}: unknown input {input:?}", spec.id)))?;
            let cfg = KeyedOracleConfig {
                key_column: key_column.clone(),
                temperature: *temperature,
                seed: *seed,
            };
            let mut b = KeyedBackend::for_table(&spec.id, cfg, table)?;
            if let Some(t) = *filter_above {
                b = b.with_filter(move |k| k - t);
            }
            Arc::new(b)
        }
        BackendKind::Http {
            base_url,
            model,
            api_key_env,
            timeout_secs,
        } => Arc::new(HttpBackend::new(HttpConfig {
            id: spec.id.clone(),
            base_url: base_url.clone(),
            model: model.clone(),
            api_key_env: api_key_env.clone(),
            timeout_secs: timeout_secs.unwrap_or(120),
            top_logprobs: 5,
        })?),
    })
}

fn run_op(pipeline: &Pipeline, session: &Session, op: &OpKind, cur: &Table, tables: &HashMap<String, Table>) -> crate::Result<Table> {
    let table_named = |name: &str| {
        tables
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown table {name:?}")))
    };
    let parse = |src: &str| Langex::parse(src).map_err(Error::from);
    match op {
        OpKind::SemFilter {
            langex,
            model,
            demonstrations,
        } => sem_filter(
            session,
            cur,
            &parse(langex)?,
            &FilterOptions {
                model: model.choice(),
                demonstrations: demonstrations.clone(),
            },
        ),
        OpKind::SemMap {
            langex,
            name,
            backend,
            demonstrations,
        } => sem_map(
            session,
            cur,
            &parse(langex)?,
            name,
            &MapOptions {
                backend: backend.clone(),
                demonstrations: demonstrations.clone(),
            },
        ),
        OpKind::SemExtract { langex, name, backend } => sem_extract(
            session,
            cur,
            &parse(langex)?,
            name,
            &MapOptions {
                backend: backend.clone(),
                demonstrations: Vec::new(),
            },
        ),
        OpKind::SemTopk {
            langex,
            k,
            algorithm,
            pivot,
            epsilon,
            pivot_seed,
            group_by,
            model,
        } => {
            let mut cfg = TopkConfig::new(*k, *algorithm);
            cfg.pivot = if pivot == "sem_index" {
                PivotStrategy::SemIndex {
                    epsilon: *epsilon,
                    seed: *pivot_seed,
                }
            } else {
                PivotStrategy::Random { seed: *pivot_seed }
            };
            cfg.model = model.choice();
            cfg.group_by = group_by.clone();
            sem_topk(session, cur, &parse(langex)?, &cfg)
        }
        OpKind::SemJoin {
            right,
            langex,
            pattern,
            budget,
            how,
            left_on,
            right_on,
            map_backend,
            map_demos,
            model,
        } => {
            let cfg = JoinConfig {
                pattern: *pattern,
                call_budget: *budget,
                map_demos: map_demos.clone(),
                how: *how,
                left_on: left_on.clone(),
                right_on: right_on.clone(),
                model: model.choice(),
                map_backend: map_backend.clone(),
            };
            sem_join(session, cur, table_named(right)?, &parse(langex)?, &cfg)
        }
        OpKind::SemAgg {
            langex,
            pattern,
            max_context_chars,
            group_by,
            partition_column,
            backend,
            output_column,
        } => sem_agg(
            session,
            cur,
            &parse(langex)?,
            &AggConfig {
                pattern: *pattern,
                max_context_chars: *max_context_chars,
                group_by: group_by.clone(),
                partition_column: partition_column.clone(),
                backend: backend.clone(),
                output_column: output_column.clone(),
            },
        ),
        OpKind::SemIndex { column, dir } => sem_index(session, cur, column, pipeline.resolve(dir)),
        OpKind::LoadIndex { column, dir } => load_sem_index(session, cur, column, pipeline.resolve(dir)),
        OpKind::SemSearch {
            column,
            query,
            k,
            n_rerank,
            return_scores,
        } => sem_search(
            session,
            cur,
            column,
            query,
            &SearchOptions {
                k: *k,
                n_rerank: *n_rerank,
                return_scores: *return_scores,
            },
        ),
        OpKind::SemSimJoin {
            right,
            left_on,
            right_on,
            k,
            return_scores,
        } => sem_sim_join(session, cur, table_named(right)?, left_on, right_on, *k, *return_scores),
        OpKind::SemClusterBy {
            column,
            clusters,
            return_scores,
        } => sem_cluster_by(session, cur, column, *clusters, *return_scores),
        OpKind::SemPartitionBy { column, clusters } => {
            sem_partition_by(session, cur, &Partitioner::cluster(*clusters, column))
        }
        OpKind::GroupConcat { by, column, separator } => group_concat(cur, by, column, separator),
    }
}

fn metrics(session: &Session, rows: &IndexMap<String, usize>, start: Instant) -> RunMetrics {
    RunMetrics {
        ops: session.meter().snapshot(),
        rows: rows.clone(),
        total: session.meter().total(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Loads inputs, validates every op against the inferred intermediate
/// schemas, then executes the ops in order.
pub fn run_pipeline(pipeline: &Pipeline) -> Result<(Table, RunMetrics), PipelineError> {
    let start = Instant::now();
    let spec = &pipeline.spec;
    if spec.inputs.is_empty() {
        return Err(PipelineError::Parse("at least one input is required".into()));
    }

    let mut builder = Session::builder()
        .parallelism(spec.parallelism.unwrap_or(DEFAULT_PARALLELISM))
        .retry(RetryPolicy::default())
        .seed(spec.seed);
    if let Some(e) = &spec.embedder {
        if e.dimension == 0 {
            return Err(PipelineError::Parse("embedder dimension must be positive".into()));
        }
        builder = builder.embedder(HashEmbedder::new(e.dimension, e.seed));
    }
    if spec.reranker {
        builder = builder.reranker(OverlapReranker);
    }

    let mut raw: HashMap<String, Table> = HashMap::new();
    for input in &spec.inputs {
        let t = load_csv(pipeline.resolve(&input.path)).map_err(|e| PipelineError::Input {
            name: input.name.clone(),
            source: e.into(),
        })?;
        if raw.insert(input.name.clone(), t).is_some() {
            return Err(PipelineError::Parse(format!("duplicate input name {:?}", input.name)));
        }
    }
    let mut seen = BTreeSet::new();
    for b in &spec.backends {
        if !seen.insert(b.id.as_str()) {
            return Err(PipelineError::Parse(format!("duplicate backend id {:?}", b.id)));
        }
        let backend = build_backend(b, &raw).map_err(|e| PipelineError::Parse(format!("backend {:?}: {e}", b.id)))?;
        builder.add_backend(backend);
    }
    let session = builder.build();

    let mut tables: HashMap<String, Table> = HashMap::new();
    for input in &spec.inputs {
        let mut t = raw.remove(&input.name).expect("loaded above");
        for ix in &input.indexes {
            t = load_sem_index(&session, &t, &ix.column, pipeline.resolve(&ix.dir)).map_err(|e| PipelineError::Input {
                name: input.name.clone(),
                source: e,
            })?;
        }
        tables.insert(input.name.clone(), t);
    }

    // pre-flight: no LM call happens unless every op checks out
    let validator = Validator {
        backends: &spec.backends,
        has_embedder: spec.embedder.is_some(),
        has_reranker: spec.reranker,
    };
    let mut shapes: HashMap<String, Shape> = tables.iter().map(|(k, t)| (k.clone(), Shape::of(t))).collect();
    let mut cur = shapes[&spec.inputs[0].name].clone();
    for (i, op) in spec.ops.iter().enumerate() {
        let fail = |reason: String| PipelineError::Validation {
            op: i + 1,
            name: op.kind.name(),
            reason,
        };
        let input = match &op.input {
            Some(name) => shapes.get(name).cloned().ok_or_else(|| fail(format!("unknown table {name:?}")))?,
            None => cur,
        };
        cur = validator.step(&op.kind, &input, &shapes).map_err(fail)?;
        if let Some(name) = &op.save_as {
            shapes.insert(name.clone(), cur.clone());
        }
    }

    let mut rows = IndexMap::new();
    let mut current = tables[&spec.inputs[0].name].clone();
    for (i, op) in spec.ops.iter().enumerate() {
        let label = format!("{}:{}", i + 1, op.kind.name());
        let input = match &op.input {
            Some(name) => tables[name].clone(),
            None => current,
        };
        let session = session.labeled(label.clone());
        let out = session_run(pipeline, &session, &label, &op.kind, &input, &tables).map_err(|source| {
            PipelineError::Runtime {
                op: i + 1,
                name: op.kind.name(),
                source,
                metrics: Box::new(metrics(&session, &rows, start)),
            }
        })?;
        rows.insert(label, out.row_count());
        if let Some(name) = &op.save_as {
            tables.insert(name.clone(), out.clone());
        }
        current = out;
    }
    if let Some(path) = &spec.output {
        write_csv(&current, pipeline.resolve(path)).map_err(|e| PipelineError::Output(e.into()))?;
    }
    Ok((current, metrics(&session, &rows, start)))
}

/// Runs one op; ops that never dispatch still get an (empty) meter entry so
/// every op appears in the metrics.
fn session_run(
    pipeline: &Pipeline,
    session: &Session,
    label: &str,
    op: &OpKind,
    input: &Table,
    tables: &HashMap<String, Table>,
) -> crate::Result<Table> {
    session.meter().update(label, |_| {});
    run_op(pipeline, session, op, input, tables)
}
