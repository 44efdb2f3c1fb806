//! Synthetic hidden-key ranking benchmark and nDCG scoring.

use std::time::Instant;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::langex::Langex;
use crate::lm::mock::{KeyedBackend, KeyedOracleConfig};
use crate::ops::topk::{sem_topk, Algorithm, PivotStrategy, TopkConfig};
use crate::session::Session;
use crate::table::{Column, RowId, Table};

pub const KEY_COLUMN: &str = "accuracy";
pub const TEXT_COLUMN: &str = "abstract";
pub const BENCH_QUERY: &str = "Which {abstract} reports the highest accuracy?";

const TOPICS: &[&str] = &[
    "image classification", "protein folding", "question answering", "speech recognition",
    "graph partitioning", "code generation", "machine translation", "anomaly detection",
    "weather forecasting", "drug discovery", "entity linking", "object tracking",
];
const METHODS: &[&str] = &[
    "a sparse transformer", "gradient boosted trees", "a recurrent encoder", "contrastive pretraining",
    "a mixture of experts", "retrieval augmentation", "a convolutional backbone", "distillation",
    "a graph neural network", "self-training", "curriculum learning", "low-rank adapters",
];
const DATASETS: &[&str] = &[
    "a new benchmark", "five public datasets", "a held-out test split", "three domains",
    "a multilingual corpus", "synthetic and real data", "a clinical cohort", "noisy web data",
];

/// Generated corpus and its descending-key ground truth.
#[derive(Debug, Clone)]
pub struct BenchCorpus {
    pub table: Table,
    pub keys: Vec<f64>,
    /// Rows by descending key, ties by ascending RowId.
    pub truth: Vec<RowId>,
}

/// `n` synthetic paper abstracts, each stating its accuracy, keys uniform on
/// `[0, 100]`.
pub fn gen_bench(n: usize, seed: u64) -> BenchCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = Vec::with_capacity(n);
    let mut texts = Vec::with_capacity(n);
    for i in 0..n {
        let key: f64 = rng.gen_range(0.0..=100.0);
        let topic = TOPICS.choose(&mut rng).expect("non-empty");
        let method = METHODS.choose(&mut rng).expect("non-empty");
        let data = DATASETS.choose(&mut rng).expect("non-empty");
        texts.push(format!(
            "Paper {i}. We study {topic} with {method}. Evaluated on {data}, the approach reaches an accuracy of {key:.3}%."
        ));
        keys.push(key);
    }
    let mut truth: Vec<RowId> = (0..n).map(RowId).collect();
    truth.sort_by(|a, b| keys[b.0].total_cmp(&keys[a.0]).then(a.cmp(b)));
    let table = Table::new(vec![
        Column::text(TEXT_COLUMN, texts),
        Column::float(KEY_COLUMN, keys.iter().copied()),
    ])
    .expect("equal-length columns");
    BenchCorpus { table, keys, truth }
}

/// Binary-relevance nDCG@k: a ranked row scores 1 when it is in the true
/// top-k. The ideal places k relevant rows first.
pub fn ndcg_at_k(ranked: &[RowId], truth: &[RowId], k: usize) -> f64 {
    let relevant: std::collections::HashSet<RowId> = truth.iter().take(k).copied().collect();
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, r)| relevant.contains(r))
        .map(|(i, _)| gain(i))
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(gain).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            n: 200,
            k: 10,
            trials: 20,
            seed: 0,
            parallelism: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub temperature: f64,
    pub trials: usize,
    pub mean_ndcg: f64,
    pub mean_lm_calls: f64,
    pub mean_batches: f64,
    pub max_batch_size: u64,
    pub mean_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, algorithm: Algorithm, temperature: f64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.temperature == temperature)
    }
}

/// Result of one top-k run on a generated corpus.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub ranked: Vec<RowId>,
    pub ndcg: f64,
    pub lm_calls: u64,
    pub batches: u64,
    pub max_batch_size: u64,
    pub wall_ms: f64,
}

/// Ranks one corpus with a keyed oracle at `temperature`.
pub fn run_trial(
    corpus: &BenchCorpus,
    algorithm: Algorithm,
    temperature: f64,
    k: usize,
    seed: u64,
    parallelism: usize,
) -> Result<TrialResult> {
    let cfg = KeyedOracleConfig {
        key_column: KEY_COLUMN.to_string(),
        temperature,
        seed,
    };
    let backend = KeyedBackend::for_table("oracle", cfg, &corpus.table)?;
    let session = Session::builder().parallelism(parallelism).backend(backend).build();
    let mut topk = TopkConfig::new(k, algorithm);
    topk.pivot = PivotStrategy::Random { seed };
    let langex = Langex::parse(BENCH_QUERY)?;
    let start = Instant::now();
    let out = sem_topk(&session, &corpus.table, &langex, &topk)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let ranked = ranked_rows(&out, corpus)?;
    let c = session.meter().total();
    Ok(TrialResult {
        ndcg: ndcg_at_k(&ranked, &corpus.truth, k),
        ranked,
        lm_calls: c.lm_calls,
        batches: c.batches,
        max_batch_size: c.max_batch_size,
        wall_ms,
    })
}

/// Maps output rows back to corpus RowIds through the unique abstract text.
fn ranked_rows(out: &Table, corpus: &BenchCorpus) -> Result<Vec<RowId>> {
    let all = corpus.table.text_column(TEXT_COLUMN)?;
    let got = out.text_column(TEXT_COLUMN)?;
    Ok(got
        .iter()
        .map(|t| RowId(all.iter().position(|a| a == t).expect("row comes from the corpus")))
        .collect())
}

/// Mean nDCG@k and call statistics per (algorithm, temperature). Trial `t`
/// uses corpus and oracle seed `opts.seed + t`, so the report is a pure
/// function of its inputs.
pub fn bench_ranking(algorithms: &[Algorithm], temperatures: &[f64], opts: &BenchOptions) -> Result<BenchReport> {
    let corpora: Vec<BenchCorpus> = (0..opts.trials as u64).map(|t| gen_bench(opts.n, opts.seed + t)).collect();
    let mut rows = Vec::new();
    for &temperature in temperatures {
        for &algorithm in algorithms {
            let mut sums = (0.0, 0.0, 0.0, 0.0);
            let mut max_batch = 0;
            for (t, corpus) in corpora.iter().enumerate() {
                let r = run_trial(corpus, algorithm, temperature, opts.k, opts.seed + t as u64, opts.parallelism)?;
                sums.0 += r.ndcg;
                sums.1 += r.lm_calls as f64;
                sums.2 += r.batches as f64;
                sums.3 += r.wall_ms;
                max_batch = max_batch.max(r.max_batch_size);
            }
            let n = opts.trials.max(1) as f64;
            rows.push(BenchRow {
                algorithm,
                temperature,
                trials: opts.trials,
                mean_ndcg: sums.0 / n,
                mean_lm_calls: sums.1 / n,
                mean_batches: sums.2 / n,
                max_batch_size: max_batch,
                mean_wall_ms: sums.3 / n,
            });
        }
    }
    Ok(BenchReport {
        n: opts.n,
        k: opts.k,
        seed: opts.seed,
        rows,
    })
}
