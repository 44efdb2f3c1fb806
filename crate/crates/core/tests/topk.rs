use std::sync::Arc;

use proptest::prelude::*;

use semops::bench::{gen_bench, BENCH_QUERY, KEY_COLUMN, TEXT_COLUMN};
use semops::index::{HashEmbedder, SimIndex};
use semops::lm::mock::{KeyedBackend, KeyedOracleConfig, ScriptedBackend};
use semops::lm::PairCache;
use semops::ops::topk::{compare_pair, Source};
use semops::{sem_topk, Algorithm, Column, Langex, ModelChoice, PivotStrategy, RowId, Session, Table, TopkConfig};

fn keyed(id: &str, table: &Table, temperature: f64, seed: u64) -> KeyedBackend {
    let cfg = KeyedOracleConfig {
        key_column: KEY_COLUMN.into(),
        temperature,
        seed,
    };
    KeyedBackend::for_table(id, cfg, table).unwrap()
}

/// Descending key, ties by row position.
fn sorted_texts<'a>(texts: &[&'a str], keys: &[f64], k: usize) -> Vec<&'a str> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].partial_cmp(&keys[a]).unwrap().then(a.cmp(&b)));
    order.into_iter().take(k).map(|i| texts[i]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_judge_matches_sort(n in 2usize..40, k in 1usize..8, seed in any::<u64>()) {
        let corpus = gen_bench(n, seed);
        let session = Session::builder().backend(keyed("oracle", &corpus.table, 0.0, seed)).build();
        let texts = corpus.table.text_column(TEXT_COLUMN).unwrap();
        let want = sorted_texts(&texts, &corpus.keys, k);
        for algorithm in Algorithm::ALL {
            let mut cfg = TopkConfig::new(k, algorithm);
            cfg.pivot = PivotStrategy::Random { seed };
            let out = sem_topk(&session, &corpus.table, &Langex::parse(BENCH_QUERY).unwrap(), &cfg).unwrap();
            prop_assert_eq!(out.text_column(TEXT_COLUMN).unwrap(), want.clone(), "{}", algorithm.name());
        }
    }
}

#[test]
fn quadratic_asks_every_pair_once() {
    for n in [2, 7, 30] {
        let corpus = gen_bench(n, 3);
        let session = Session::builder().backend(keyed("oracle", &corpus.table, 0.0, 0)).build();
        sem_topk(&session, &corpus.table, &Langex::parse(BENCH_QUERY).unwrap(), &TopkConfig::new(3, Algorithm::Quadratic))
            .unwrap();
        let c = session.meter().total();
        assert_eq!(c.lm_calls, (n * (n - 1) / 2) as u64);
        assert_eq!(c.batches, 1);
    }
}

#[test]
fn heap_dispatches_one_comparison_at_a_time() {
    let corpus = gen_bench(40, 8);
    let session = Session::builder().backend(keyed("oracle", &corpus.table, 0.0, 0)).build();
    sem_topk(&session, &corpus.table, &Langex::parse(BENCH_QUERY).unwrap(), &TopkConfig::new(5, Algorithm::Heap)).unwrap();
    let c = session.meter().total();
    assert_eq!(c.max_batch_size, 1);
    assert_eq!(c.batches, c.lm_calls);
}

#[test]
fn quickselect_reuses_cached_comparisons() {
    let corpus = gen_bench(60, 9);
    let session = Session::builder().backend(keyed("oracle", &corpus.table, 0.0, 0)).build();
    let mut cfg = TopkConfig::new(10, Algorithm::Quickselect);
    cfg.pivot = PivotStrategy::Random { seed: 4 };
    sem_topk(&session, &corpus.table, &Langex::parse(BENCH_QUERY).unwrap(), &cfg).unwrap();
    let c = session.meter().total();
    // the final ordering pass revisits pairs already judged against pivots
    assert!(c.cache_hits > 0);
    assert!(c.lm_calls < 60 * 59 / 2);
}

#[test]
fn group_by_ranks_each_group() {
    let corpus = gen_bench(30, 12);
    let groups: Vec<i64> = (0..30).map(|i| (i % 3) as i64).collect();
    let table = corpus.table.with_column(Column::int("g", groups.clone())).unwrap();
    let session = Session::builder().backend(keyed("oracle", &table, 0.0, 0)).build();
    let mut cfg = TopkConfig::new(2, Algorithm::Heap);
    cfg.group_by = vec!["g".into()];
    let out = sem_topk(&session, &table, &Langex::parse(BENCH_QUERY).unwrap(), &cfg).unwrap();
    let texts = table.text_column(TEXT_COLUMN).unwrap();
    let mut want = Vec::new();
    for g in 0..3 {
        let rows: Vec<usize> = (0..30).filter(|&i| groups[i] == g).collect();
        let t: Vec<&str> = rows.iter().map(|&i| texts[i]).collect();
        let k: Vec<f64> = rows.iter().map(|&i| corpus.keys[i]).collect();
        want.extend(sorted_texts(&t, &k, 2));
    }
    assert_eq!(out.text_column(TEXT_COLUMN).unwrap(), want);
}

#[test]
fn sem_index_pivot_is_exact_without_noise() {
    let corpus = gen_bench(50, 21);
    let embedder = HashEmbedder::new(64, 0);
    let texts = corpus.table.text_column(TEXT_COLUMN).unwrap();
    let index = SimIndex::build(TEXT_COLUMN, &texts, &embedder);
    let mut table = corpus.table.clone();
    table.attach_index(TEXT_COLUMN, Arc::new(index), (0..50).collect());
    let session = Session::builder()
        .backend(keyed("oracle", &table, 0.0, 0))
        .embedder(embedder)
        .build();
    let mut cfg = TopkConfig::new(5, Algorithm::Quickselect);
    cfg.pivot = PivotStrategy::SemIndex { epsilon: None, seed: 1 };
    let out = sem_topk(&session, &table, &Langex::parse(BENCH_QUERY).unwrap(), &cfg).unwrap();
    assert_eq!(out.text_column(TEXT_COLUMN).unwrap(), sorted_texts(&texts, &corpus.keys, 5));
}

#[test]
fn sem_index_pivot_needs_an_index() {
    let corpus = gen_bench(10, 1);
    let session = Session::builder()
        .backend(keyed("oracle", &corpus.table, 0.0, 0))
        .embedder(HashEmbedder::new(16, 0))
        .build();
    let mut cfg = TopkConfig::new(2, Algorithm::Quickselect);
    cfg.pivot = PivotStrategy::SemIndex { epsilon: Some(1), seed: 0 };
    assert!(sem_topk(&session, &corpus.table, &Langex::parse(BENCH_QUERY).unwrap(), &cfg).is_err());
}

#[test]
fn malformed_answers_are_retried_then_default_to_first() {
    let table = Table::new(vec![Column::text("t", ["a", "b", "c"])]).unwrap();
    let session = Session::builder().backend(ScriptedBackend::new("noise", "perhaps")).build();
    let out = sem_topk(&session, &table, &Langex::parse("Which {t} is best?").unwrap(), &TopkConfig::new(3, Algorithm::Quadratic))
        .unwrap();
    // every pair resolves to the lower row, so row order is preserved
    assert_eq!(out.text_column("t").unwrap(), ["a", "b", "c"]);
    let c = session.meter().total();
    assert_eq!(c.lm_calls, 6);
    assert_eq!(c.malformed_outputs, 6);
}

#[test]
fn compare_pair_reports_source_and_caches() {
    let corpus = gen_bench(4, 2);
    let session = Session::builder()
        .backend(keyed("proxy", &corpus.table, 0.0, 0))
        .backend(keyed("oracle", &corpus.table, 0.0, 0))
        .build();
    let langex = Langex::parse(BENCH_QUERY).unwrap();
    let cache = PairCache::new();
    let model = ModelChoice::cascade("proxy", "oracle", 1.0);
    let first = compare_pair(&session, &corpus.table, &langex, RowId(2), RowId(0), &model, &cache).unwrap();
    assert_eq!(first.source, Source::Oracle);
    let want = if corpus.keys[2] > corpus.keys[0] { RowId(2) } else { RowId(0) };
    assert_eq!(first.winner, want);
    let again = compare_pair(&session, &corpus.table, &langex, RowId(0), RowId(2), &model, &cache).unwrap();
    assert_eq!(again.source, Source::Cache);
    assert_eq!(again.winner, want);
    assert_eq!(session.meter().total().cache_hits, 1);
}

#[test]
fn rejects_bad_arguments_before_calling() {
    let corpus = gen_bench(5, 0);
    let session = Session::builder().backend(ScriptedBackend::new("s", "Document 1")).build();
    let langex = Langex::parse(BENCH_QUERY).unwrap();
    assert!(sem_topk(&session, &corpus.table, &langex, &TopkConfig::new(0, Algorithm::Heap)).is_err());
    let missing = Langex::parse("Which {nope} is best?").unwrap();
    assert!(sem_topk(&session, &corpus.table, &missing, &TopkConfig::new(1, Algorithm::Heap)).is_err());
    let mut cfg = TopkConfig::new(1, Algorithm::Heap);
    cfg.model = ModelChoice::cascade("s", "absent", 0.5);
    assert!(sem_topk(&session, &corpus.table, &langex, &cfg).is_err());
    assert_eq!(session.meter().total().lm_calls, 0);
}
