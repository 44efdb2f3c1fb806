//! Embedders, the flat cosine index and the index-backed operators.

mod embed;
mod flat;
pub mod kmeans;

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

pub use embed::{Embedder, HashEmbedder, OverlapReranker, Reranker};
pub use flat::{content_hash, cosine, rank_order, top_k, Manifest, SimIndex, FORMAT_VERSION, MANIFEST_FILE, VECTORS_FILE};

use crate::error::{Error, Result};
use crate::session::Session;
use crate::table::{join_rows, Column, Kind, RowId, Table, Value};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing manifest: {0}")]
    MissingManifest(String),
    #[error("corrupt index: {0}")]
    CorruptManifest(String),
    #[error("index content hash {stored} does not match column {column:?} ({actual})")]
    HashMismatch {
        column: String,
        stored: String,
        actual: String,
    },
    #[error("index has {index} rows, table has {table}")]
    RowCountMismatch { index: usize, table: usize },
    #[error("index was built for column {index:?}, not {requested:?}")]
    ColumnMismatch { index: String, requested: String },
    #[error("index dimension {index} differs from embedder dimension {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
    #[error("index was built with embedder {index:?}, session uses {session:?}")]
    EmbedderMismatch { index: String, session: String },
    #[error("column {0:?} has no similarity index")]
    NoIndex(String),
}

pub const SCORE_COLUMN: &str = "_score";
pub const RERANK_SCORE_COLUMN: &str = "_rerank_score";
pub const CLUSTER_COLUMN: &str = "cluster_id";
pub const CENTROID_SCORE_COLUMN: &str = "centroid_sim";

fn check_embedder(index: &SimIndex, embedder: &dyn Embedder) -> Result<()> {
    let m = index.manifest();
    if m.embedder_id != embedder.id() {
        return Err(IndexError::EmbedderMismatch {
            index: m.embedder_id.clone(),
            session: embedder.id().to_string(),
        }
        .into());
    }
    if m.dimension != embedder.dimension() {
        return Err(IndexError::DimensionMismatch {
            index: m.dimension,
            embedder: embedder.dimension(),
        }
        .into());
    }
    Ok(())
}

/// Embeds `col`, writes the index to `dir` and returns the table with the
/// index attached.
pub fn sem_index(session: &Session, table: &Table, col: &str, dir: impl AsRef<Path>) -> Result<Table> {
    let op = session.op_label("sem_index");
    session.timed(op, || {
        let embedder = session.embedder()?;
        let cells = table.text_column(col)?;
        let index = SimIndex::build(col, &cells, embedder.as_ref());
        index.save(dir)?;
        let mut out = table.clone();
        out.attach_index(col, Arc::new(index), (0..table.row_count()).collect());
        Ok(out)
    })
}

/// Loads a persisted index for `col` and attaches it, after checking it was
/// built from exactly this column's content.
pub fn load_sem_index(session: &Session, table: &Table, col: &str, dir: impl AsRef<Path>) -> Result<Table> {
    let index = SimIndex::load(dir)?;
    if let Ok(embedder) = session.embedder() {
        check_embedder(&index, embedder.as_ref())?;
    }
    attach_checked(table, col, index)
}

/// Attaches an already-loaded index after the column checks.
pub fn attach_checked(table: &Table, col: &str, index: SimIndex) -> Result<Table> {
    let m = index.manifest();
    if m.column != col {
        return Err(IndexError::ColumnMismatch {
            index: m.column.clone(),
            requested: col.to_string(),
        }
        .into());
    }
    if m.row_count != table.row_count() {
        return Err(IndexError::RowCountMismatch {
            index: m.row_count,
            table: table.row_count(),
        }
        .into());
    }
    let cells = table.text_column(col)?;
    let actual = content_hash(&cells);
    if actual != m.content_hash {
        return Err(IndexError::HashMismatch {
            column: col.to_string(),
            stored: m.content_hash.clone(),
            actual,
        }
        .into());
    }
    let mut out = table.clone();
    out.attach_index(col, Arc::new(index), (0..table.row_count()).collect());
    Ok(out)
}

fn attached<'a>(table: &'a Table, col: &str) -> Result<&'a crate::table::AttachedIndex> {
    table
        .index(col)
        .ok_or_else(|| IndexError::NoIndex(col.to_string()).into())
}

/// Cosine scores of every table row against `query`, best `k` first.
pub fn search_vectors(table: &Table, col: &str, query: &[f32], k: usize) -> Result<Vec<(RowId, f64)>> {
    let att = attached(table, col)?;
    let scored = att
        .rows
        .iter()
        .enumerate()
        .map(|(pos, &ix)| (pos, cosine(query, att.index.vector(ix))))
        .collect();
    Ok(top_k(scored, k).into_iter().map(|(p, s)| (RowId(p), s)).collect())
}

/// Embeds each query and returns its `k` nearest rows of `table.col`.
pub(crate) fn nearest_rows(
    session: &Session,
    table: &Table,
    col: &str,
    queries: &[&str],
    k: usize,
) -> Result<Vec<Vec<(RowId, f64)>>> {
    let att = attached(table, col)?;
    let embedder = session.embedder()?;
    check_embedder(&att.index, embedder.as_ref())?;
    let vectors = embedder.embed(queries);
    vectors
        .par_iter()
        .map(|q| search_vectors(table, col, q, k))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub k: usize,
    pub n_rerank: Option<usize>,
    pub return_scores: bool,
}

impl SearchOptions {
    pub fn top(k: usize) -> Self {
        Self {
            k,
            n_rerank: None,
            return_scores: false,
        }
    }
}

/// Top-`k` rows by cosine similarity to `query`, optionally re-ranked.
pub fn sem_search(session: &Session, table: &Table, col: &str, query: &str, opts: &SearchOptions) -> Result<Table> {
    let op = session.op_label("sem_search");
    session.timed(op, || {
        if opts.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if let Some(n) = opts.n_rerank {
            if n > opts.k {
                return Err(Error::InvalidArgument(format!("n_rerank {n} exceeds K {}", opts.k)));
            }
        }
        let mut hits = nearest_rows(session, table, col, &[query], opts.k)?.remove(0);
        let mut rerank_scores = None;
        if let Some(n) = opts.n_rerank {
            let reranker = session
                .reranker()
                .ok_or_else(|| Error::InvalidArgument("n_rerank requires a reranker".into()))?;
            let texts = table.text_column(col)?;
            let mut rescored: Vec<(usize, f64)> = hits
                .iter()
                .enumerate()
                .map(|(pos, (row, _))| (pos, reranker.score(query, texts[row.0])))
                .collect();
            rescored.sort_by(rank_order);
            rescored.truncate(n);
            rerank_scores = Some(rescored.iter().map(|&(_, s)| s).collect::<Vec<_>>());
            hits = rescored.iter().map(|&(pos, _)| hits[pos]).collect();
        }
        let rows: Vec<RowId> = hits.iter().map(|h| h.0).collect();
        let mut out = table.take(&rows);
        if opts.return_scores {
            out = out.with_column(Column::float(SCORE_COLUMN, hits.iter().map(|h| h.1)))?;
            if let Some(scores) = rerank_scores {
                out = out.with_column(Column::float(RERANK_SCORE_COLUMN, scores))?;
            }
        }
        Ok(out)
    })
}

/// For each left row, its `k` most similar right rows. The left key is
/// embedded on the fly.
pub fn sem_sim_join(
    session: &Session,
    left: &Table,
    right: &Table,
    left_on: &str,
    right_on: &str,
    k: usize,
    return_scores: bool,
) -> Result<Table> {
    let op = session.op_label("sem_sim_join");
    session.timed(op, || {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        attached(right, right_on)?;
        if right.row_count() < k {
            log::warn!(
                "sem_sim_join: K={k} but right table has {} rows; returning all",
                right.row_count()
            );
        }
        let queries = left.text_column(left_on)?;
        let hits = nearest_rows(session, right, right_on, &queries, k)?;
        let mut pairs = Vec::new();
        let mut scores = Vec::new();
        for (l, row_hits) in hits.iter().enumerate() {
            for &(r, s) in row_hits {
                pairs.push((Some(RowId(l)), Some(r)));
                scores.push(s);
            }
        }
        let mut out = join_rows(left, right, &pairs)?;
        if return_scores {
            out = out.with_column(Column::float(SCORE_COLUMN, scores))?;
        }
        Ok(out)
    })
}

/// Result of clustering an indexed column.
pub fn cluster_rows(session: &Session, table: &Table, col: &str, clusters: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let att = attached(table, col)?;
    if clusters == 0 || clusters > table.row_count() {
        return Err(Error::InvalidArgument(format!(
            "cluster count {clusters} outside [1, {}]",
            table.row_count()
        )));
    }
    let points: Vec<&[f32]> = att.rows.iter().map(|&ix| att.index.vector(ix)).collect();
    let km = kmeans::kmeans(&points, clusters, session.seed());
    let sims = points
        .iter()
        .zip(&km.assignments)
        .map(|(p, &c)| {
            let centroid = &km.centroids[c];
            let cn = centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
            let pn = p.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if cn == 0.0 || pn == 0.0 {
                0.0
            } else {
                // f32 storage can put a point a hair past its own centroid
                (p.iter().zip(centroid).map(|(&x, y)| x as f64 * y).sum::<f64>() / (cn * pn)).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok((km.assignments, sims))
}

/// Appends `cluster_id` from k-means over the index vectors.
pub fn sem_cluster_by(session: &Session, table: &Table, col: &str, clusters: usize, return_scores: bool) -> Result<Table> {
    let op = session.op_label("sem_cluster_by");
    session.timed(op, || {
        let (ids, sims) = cluster_rows(session, table, col, clusters)?;
        let mut out = table.with_column(Column {
            name: CLUSTER_COLUMN.into(),
            kind: Kind::Int,
            values: ids.iter().map(|&c| Value::Int(c as i64)).collect(),
        })?;
        if return_scores {
            out = out.with_column(Column::float(CENTROID_SCORE_COLUMN, sims))?;
        }
        Ok(out)
    })
}
