//! Pairwise-comparison top-k: quadratic tournament, heap and quick-select.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{cosine, IndexError};
use crate::langex::{Langex, Mode, Side};
use crate::lm::{criterion_hash, LmRequest, PairCache, PairKey, Role, DOCUMENTS};
use crate::ops::{answer_labelled, ensure_renderable, ModelChoice};
use crate::prompts::{compare_user, render_document, COMPARE_SYSTEM};
use crate::session::Session;
use crate::table::{partition_by_equality, RowId, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Quadratic,
    Heap,
    Quickselect,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Quadratic, Algorithm::Heap, Algorithm::Quickselect];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Quadratic => "quadratic",
            Algorithm::Heap => "heap",
            Algorithm::Quickselect => "quickselect",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quadratic" => Ok(Algorithm::Quadratic),
            "heap" => Ok(Algorithm::Heap),
            "quickselect" | "quick-select" => Ok(Algorithm::Quickselect),
            other => Err(Error::InvalidArgument(format!("unknown top-k algorithm {other:?}"))),
        }
    }
}

/// How quick-select picks pivots.
#[derive(Debug, Clone, PartialEq)]
pub enum PivotStrategy {
    Random { seed: u64 },
    /// First pivot is the item at embedding-similarity rank `k + epsilon`;
    /// `epsilon` defaults to `ceil(k / 2)`. Later pivots are random.
    SemIndex { epsilon: Option<usize>, seed: u64 },
}

impl Default for PivotStrategy {
    fn default() -> Self {
        PivotStrategy::Random { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopkConfig {
    pub k: usize,
    pub algorithm: Algorithm,
    pub pivot: PivotStrategy,
    pub model: ModelChoice,
    pub group_by: Vec<String>,
}

impl TopkConfig {
    pub fn new(k: usize, algorithm: Algorithm) -> Self {
        Self {
            k,
            algorithm,
            pivot: PivotStrategy::default(),
            model: ModelChoice::Default,
            group_by: Vec::new(),
        }
    }
}

/// Answers batches of "which of these two ranks higher" questions.
pub trait PairwiseJudge {
    /// Winner of each pair, aligned with the input.
    fn judge(&self, pairs: &[(RowId, RowId)]) -> Result<Vec<RowId>>;
}

impl<F: Fn(&[(RowId, RowId)]) -> Result<Vec<RowId>>> PairwiseJudge for F {
    fn judge(&self, pairs: &[(RowId, RowId)]) -> Result<Vec<RowId>> {
        self(pairs)
    }
}

/// Orders by descending win count over all pairs, ties by ascending RowId.
pub fn quadratic_topk(items: &[RowId], judge: &dyn PairwiseJudge, k: usize) -> Result<Vec<RowId>> {
    let mut pairs = Vec::with_capacity(items.len() * items.len().saturating_sub(1) / 2);
    for (i, &a) in items.iter().enumerate() {
        for &b in &items[i + 1..] {
            pairs.push((a, b));
        }
    }
    let winners = judge.judge(&pairs)?;
    let mut wins: HashMap<RowId, usize> = items.iter().map(|&r| (r, 0)).collect();
    for w in winners {
        *wins.get_mut(&w).expect("winner outside the compared items") += 1;
    }
    let mut ranked = items.to_vec();
    ranked.sort_by(|a, b| wins[b].cmp(&wins[a]).then(a.cmp(b)));
    ranked.truncate(k);
    Ok(ranked)
}

struct WorstHeap<'a> {
    slots: Vec<RowId>,
    judge: &'a dyn PairwiseJudge,
}

impl WorstHeap<'_> {
    fn worse(&self, a: RowId, b: RowId) -> Result<bool> {
        Ok(self.judge.judge(&[(a, b)])?[0] == b)
    }

    fn sift_up(&mut self, mut i: usize) -> Result<()> {
        while i > 0 {
            let parent = (i - 1) / 2;
            if !self.worse(self.slots[i], self.slots[parent])? {
                break;
            }
            self.slots.swap(i, parent);
            i = parent;
        }
        Ok(())
    }

    fn sift_down(&mut self, mut i: usize) -> Result<()> {
        loop {
            let mut worst = i;
            for child in [2 * i + 1, 2 * i + 2] {
                if child < self.slots.len() && self.worse(self.slots[child], self.slots[worst])? {
                    worst = child;
                }
            }
            if worst == i {
                return Ok(());
            }
            self.slots.swap(i, worst);
            i = worst;
        }
    }
}

/// Bounded min-heap of the current best `k`; one comparison per dispatch.
pub fn heap_topk(items: &[RowId], judge: &dyn PairwiseJudge, k: usize) -> Result<Vec<RowId>> {
    let k = k.min(items.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut heap = WorstHeap {
        slots: Vec::with_capacity(k),
        judge,
    };
    for &item in &items[..k] {
        heap.slots.push(item);
        heap.sift_up(heap.slots.len() - 1)?;
    }
    for &item in &items[k..] {
        if heap.worse(heap.slots[0], item)? {
            heap.slots[0] = item;
            heap.sift_down(0)?;
        }
    }
    let mut out = Vec::with_capacity(k);
    while !heap.slots.is_empty() {
        let last = heap.slots.len() - 1;
        heap.slots.swap(0, last);
        out.push(heap.slots.pop().expect("non-empty"));
        heap.sift_down(0)?;
    }
    out.reverse();
    Ok(out)
}

/// Picks the pivot for each quick-select round.
pub struct Pivots {
    rng: ChaCha8Rng,
    /// Items by descending embedding similarity, for the first pivot.
    similarity_order: Option<(Vec<RowId>, usize)>,
}

impl Pivots {
    pub fn random(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            similarity_order: None,
        }
    }

    /// First pivot at similarity rank `rank` (1-based), later ones random.
    pub fn ranked(order: Vec<RowId>, rank: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            similarity_order: Some((order, rank.max(1))),
        }
    }

    fn pick(&mut self, live: &[RowId]) -> usize {
        if let Some((order, rank)) = self.similarity_order.take() {
            let ordered: Vec<RowId> = order.into_iter().filter(|r| live.contains(r)).collect();
            if !ordered.is_empty() {
                let target = ordered[(rank - 1).min(ordered.len() - 1)];
                return live.iter().position(|&r| r == target).expect("filtered from live");
            }
        }
        self.rng.gen_range(0..live.len())
    }
}

/// Quick-select with one batched round of pivot comparisons per partition
/// step, then a quadratic pass to order the selected `k`.
pub fn quickselect_topk(items: &[RowId], judge: &dyn PairwiseJudge, k: usize, pivots: &mut Pivots) -> Result<Vec<RowId>> {
    let k = k.min(items.len());
    let mut live = items.to_vec();
    let mut need = k;
    let mut selected = Vec::with_capacity(k);
    while need > 0 {
        if live.len() <= need {
            selected.append(&mut live);
            break;
        }
        let pivot = live.swap_remove(pivots.pick(&live));
        let pairs: Vec<(RowId, RowId)> = live.iter().map(|&r| (r, pivot)).collect();
        let winners = judge.judge(&pairs)?;
        let (better, worse): (Vec<RowId>, Vec<RowId>) =
            live.iter().zip(&winners).map(|(&r, &w)| (r, w == r)).fold(
                (Vec::new(), Vec::new()),
                |(mut b, mut w), (r, won)| {
                    if won {
                        b.push(r)
                    } else {
                        w.push(r)
                    }
                    (b, w)
                },
            );
        if better.len() >= need {
            live = better;
        } else {
            need -= better.len() + 1;
            selected.extend(better);
            selected.push(pivot);
            live = worse;
        }
    }
    selected.sort();
    if selected.len() <= 1 {
        return Ok(selected);
    }
    quadratic_topk(&selected, judge, k)
}

/// Where a comparison's answer came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Single-model answer, no cascade.
    Model,
    Proxy,
    Oracle,
    Cache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComparisonOutcome {
    pub pair: (RowId, RowId),
    pub winner: RowId,
    pub source: Source,
}

/// LM-backed judge for one `sem_topk` invocation. The lower RowId is always
/// shown as Document 1, so the prompt for a pair never depends on call order.
pub struct Comparator<'a> {
    session: &'a Session,
    op: &'a str,
    question: String,
    documents: Vec<String>,
    model: &'a ModelChoice,
    cache: &'a PairCache,
    criterion: u64,
}

impl<'a> Comparator<'a> {
    pub fn new(
        session: &'a Session,
        op: &'a str,
        table: &Table,
        langex: &Langex,
        model: &'a ModelChoice,
        cache: &'a PairCache,
    ) -> Result<Self> {
        let columns = langex.columns(Side::None);
        ensure_renderable(table, &columns)?;
        let documents = table
            .row_ids()
            .map(|r| render_document(table, r, &columns))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            session,
            op,
            question: langex.instruction(),
            documents,
            model,
            cache,
            criterion: criterion_hash(&langex.to_source()),
        })
    }

    fn request(&self, lo: RowId, hi: RowId) -> LmRequest {
        LmRequest::new(
            COMPARE_SYSTEM,
            compare_user(&self.question, &self.documents[lo.0], &self.documents[hi.0]),
        )
        .with_labels(&DOCUMENTS)
        .with_max_output_chars(16)
    }

    /// Compares every pair, consulting the cache first. Malformed answers are
    /// retried once and then default to Document 1.
    pub fn compare_batch(&self, pairs: &[(RowId, RowId)]) -> Result<Vec<ComparisonOutcome>> {
        let mut out: Vec<Option<ComparisonOutcome>> = vec![None; pairs.len()];
        let mut pending: Vec<(RowId, RowId)> = Vec::new();
        let mut pending_slot: HashMap<(RowId, RowId), usize> = HashMap::new();
        let mut hits = 0u64;
        for (i, &(a, b)) in pairs.iter().enumerate() {
            if a == b {
                return Err(Error::InvalidArgument(format!("cannot compare {a} with itself")));
            }
            let key = PairKey::new(a, b, self.criterion);
            if let Some(winner) = self.cache.lookup(&key) {
                hits += 1;
                out[i] = Some(ComparisonOutcome {
                    pair: (a, b),
                    winner,
                    source: Source::Cache,
                });
            } else {
                let ordered = (a.min(b), a.max(b));
                if pending_slot.contains_key(&ordered) {
                    hits += 1;
                } else {
                    pending_slot.insert(ordered, pending.len());
                    pending.push(ordered);
                }
            }
        }
        let requests: Vec<LmRequest> = pending.iter().map(|&(lo, hi)| self.request(lo, hi)).collect();
        let answers = answer_labelled(self.session, self.op, self.model, &requests, true)?;
        for (&(lo, hi), answer) in pending.iter().zip(&answers) {
            let winner = if answer.label == Some(1) { hi } else { lo };
            self.cache.store(PairKey::new(lo, hi, self.criterion), winner);
        }
        if hits > 0 {
            self.session.meter().update(self.op, |c| c.cache_hits += hits);
        }
        for (i, &(a, b)) in pairs.iter().enumerate() {
            if out[i].is_some() {
                continue;
            }
            let slot = pending_slot[&(a.min(b), a.max(b))];
            let (lo, hi) = pending[slot];
            let answer = answers[slot];
            out[i] = Some(ComparisonOutcome {
                pair: (a, b),
                winner: if answer.label == Some(1) { hi } else { lo },
                source: match answer.role {
                    Role::Single => Source::Model,
                    Role::Proxy => Source::Proxy,
                    Role::Oracle => Source::Oracle,
                },
            });
        }
        Ok(out.into_iter().map(|o| o.expect("every pair answered")).collect())
    }
}

impl PairwiseJudge for Comparator<'_> {
    fn judge(&self, pairs: &[(RowId, RowId)]) -> Result<Vec<RowId>> {
        Ok(self.compare_batch(pairs)?.into_iter().map(|o| o.winner).collect())
    }
}

/// One comparison of rows `i` and `j` under `langex`.
pub fn compare_pair(
    session: &Session,
    table: &Table,
    langex: &Langex,
    i: RowId,
    j: RowId,
    model: &ModelChoice,
    cache: &PairCache,
) -> Result<ComparisonOutcome> {
    langex.validate(&table.schema(), None, Mode::Single)?;
    let op = session.op_label("compare");
    let cmp = Comparator::new(session, op, table, langex, model, cache)?;
    Ok(cmp.compare_batch(&[(i, j)])?.remove(0))
}

fn similarity_order(session: &Session, table: &Table, langex: &Langex, items: &[RowId]) -> Result<Vec<RowId>> {
    let columns = langex.columns(Side::None);
    let col = columns
        .iter()
        .find(|c| table.index(c).is_some())
        .ok_or_else(|| IndexError::NoIndex(columns.join(", ")))?;
    let att = table.index(col).expect("checked above");
    let embedder = session.embedder()?;
    let query = embedder.embed(&[langex.without_placeholders().as_str()]).remove(0);
    let mut scored: Vec<(usize, f64)> = items
        .iter()
        .enumerate()
        .map(|(pos, r)| (pos, cosine(&query, att.index.vector(att.rows[r.0]))))
        .collect();
    scored.sort_by(crate::index::rank_order);
    Ok(scored.into_iter().map(|(pos, _)| items[pos]).collect())
}

/// Best `k` rows by the criterion in `langex`, best first. With `group_by`,
/// the best `k` of each group, groups in first-occurrence order.
pub fn sem_topk(session: &Session, table: &Table, langex: &Langex, cfg: &TopkConfig) -> Result<Table> {
    let op = session.op_label("sem_topk");
    session.timed(op, || {
        langex.validate(&table.schema(), None, Mode::Single)?;
        if cfg.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        cfg.model.check(session)?;
        let groups = partition_by_equality(table, &cfg.group_by)?;
        let cache = PairCache::new();
        let cmp = Comparator::new(session, op, table, langex, &cfg.model, &cache)?;
        let mut rows = Vec::new();
        for (_, items) in groups {
            let best = match cfg.algorithm {
                Algorithm::Quadratic => quadratic_topk(&items, &cmp, cfg.k)?,
                Algorithm::Heap => heap_topk(&items, &cmp, cfg.k)?,
                Algorithm::Quickselect => {
                    let mut pivots = match &cfg.pivot {
                        PivotStrategy::Random { seed } => Pivots::random(*seed),
                        PivotStrategy::SemIndex { epsilon, seed } => {
                            let eps = epsilon.unwrap_or(cfg.k.div_ceil(2));
                            Pivots::ranked(similarity_order(session, table, langex, &items)?, cfg.k + eps, *seed)
                        }
                    };
                    quickselect_topk(&items, &cmp, cfg.k, &mut pivots)?
                }
            };
            rows.extend(best);
        }
        Ok(table.take(&rows))
    })
}
