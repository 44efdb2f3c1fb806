use std::sync::Arc;

use proptest::prelude::*;

use semops::index::{
    search_vectors, Embedder, HashEmbedder, IndexError, OverlapReranker, SimIndex, CENTROID_SCORE_COLUMN,
    CLUSTER_COLUMN, RERANK_SCORE_COLUMN, SCORE_COLUMN,
};
use semops::{load_sem_index, sem_cluster_by, sem_index, sem_search, sem_sim_join, Column, Error, SearchOptions, Session, Table, Value};

fn table(texts: &[String]) -> Table {
    Table::new(vec![Column::text("doc", texts.to_vec())]).unwrap()
}

fn indexed(texts: &[String], embedder: &HashEmbedder) -> Table {
    let t = table(texts);
    let cells = t.text_column("doc").unwrap();
    let mut out = t.clone();
    out.attach_index("doc", Arc::new(SimIndex::build("doc", &cells, embedder)), (0..texts.len()).collect());
    out
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let n = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if n(a) == 0.0 || n(b) == 0.0 {
        0.0
    } else {
        dot / (n(a) * n(b))
    }
}

fn scores(t: &Table, col: &str) -> Vec<f64> {
    t.column(col).unwrap().values.iter().map(|v| v.as_f64().unwrap()).collect()
}

fn corpus() -> Vec<String> {
    ["red apple pie", "green apple", "blue sky", "apple tree orchard", "stormy sky tonight", "pie crust recipe"]
        .map(String::from)
        .to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_matches_brute_force(
        texts in prop::collection::vec("[a-f ]{1,20}", 1..80),
        query in "[a-f ]{1,20}",
        k in 1usize..15,
    ) {
        let embedder = HashEmbedder::new(32, 3);
        let t = indexed(&texts, &embedder);
        let q = embedder.embed_one(&query);
        let got = search_vectors(&t, "doc", &q, k).unwrap();
        let mut want: Vec<(usize, f64)> = texts.iter().enumerate().map(|(i, s)| (i, cos(&q, &embedder.embed_one(s)))).collect();
        want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        want.truncate(k);
        prop_assert_eq!(got.len(), want.len());
        for (rank, ((row, s), (_, w))) in got.iter().zip(&want).enumerate() {
            prop_assert!((s - w).abs() <= 1e-6, "rank {rank}: {s} vs {w}");
            // the reported row really has that score
            prop_assert!((s - cos(&q, &embedder.embed_one(&texts[row.0]))).abs() <= 1e-6);
        }
        prop_assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn embeddings_are_unit_norm_or_zero(text in "\\PC{0,40}") {
        let v = HashEmbedder::new(48, 9).embed_one(&text);
        let n: f64 = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-5);
    }
}

#[test]
fn persisted_index_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::builder().embedder(HashEmbedder::new(32, 1)).build();
    let t = table(&corpus());
    let built = sem_index(&session, &t, "doc", dir.path()).unwrap();
    let loaded = load_sem_index(&session, &t, "doc", dir.path()).unwrap();
    let opts = SearchOptions {
        return_scores: true,
        ..SearchOptions::top(3)
    };
    let a = sem_search(&session, &built, "doc", "apple", &opts).unwrap();
    let b = sem_search(&session, &loaded, "doc", "apple", &opts).unwrap();
    assert_eq!(a.text_column("doc").unwrap(), b.text_column("doc").unwrap());
    assert_eq!(scores(&a, SCORE_COLUMN), scores(&b, SCORE_COLUMN));
    assert_eq!(SimIndex::load(dir.path()).unwrap().vectors(), built.index("doc").unwrap().index.vectors());
    assert_eq!(session.meter().total().lm_calls, 0);
}

#[test]
fn stale_or_foreign_index_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let session = Session::builder().embedder(HashEmbedder::new(32, 1)).build();
    let t = table(&corpus());
    sem_index(&session, &t, "doc", dir.path()).unwrap();

    let mut edited = corpus();
    edited[2] = "blue skies".into();
    let err = load_sem_index(&session, &table(&edited), "doc", dir.path()).unwrap_err();
    assert!(matches!(err, Error::Index(IndexError::HashMismatch { .. })), "{err}");

    let err = load_sem_index(&session, &table(&corpus()[..4]), "doc", dir.path()).unwrap_err();
    assert!(matches!(err, Error::Index(IndexError::RowCountMismatch { index: 6, table: 4 })), "{err}");

    let renamed = Table::new(vec![Column::text("body", corpus())]).unwrap();
    let err = load_sem_index(&session, &renamed, "body", dir.path()).unwrap_err();
    assert!(matches!(err, Error::Index(IndexError::ColumnMismatch { .. })), "{err}");

    let other = Session::builder().embedder(HashEmbedder::new(32, 2)).build();
    let err = load_sem_index(&other, &t, "doc", dir.path()).unwrap_err();
    assert!(matches!(err, Error::Index(IndexError::EmbedderMismatch { .. })), "{err}");

    let empty = tempfile::tempdir().unwrap();
    assert!(load_sem_index(&session, &t, "doc", empty.path()).is_err());
}

#[test]
fn search_without_index_or_embedder_fails() {
    let t = table(&corpus());
    let session = Session::builder().embedder(HashEmbedder::new(32, 1)).build();
    let err = sem_search(&session, &t, "doc", "apple", &SearchOptions::top(2)).unwrap_err();
    assert!(matches!(err, Error::Index(IndexError::NoIndex(_))));
    let bare = Session::builder().build();
    let t = indexed(&corpus(), &HashEmbedder::new(32, 1));
    assert!(matches!(sem_search(&bare, &t, "doc", "apple", &SearchOptions::top(2)), Err(Error::NoEmbedder)));
}

#[test]
fn rerank_reorders_the_top_k() {
    let embedder = HashEmbedder::new(32, 1);
    let t = indexed(&corpus(), &embedder);
    let session = Session::builder().embedder(embedder).reranker(OverlapReranker).build();
    let opts = SearchOptions {
        k: 5,
        n_rerank: Some(2),
        return_scores: true,
    };
    let out = sem_search(&session, &t, "doc", "apple pie", &opts).unwrap();
    assert_eq!(out.row_count(), 2);
    let rr = scores(&out, RERANK_SCORE_COLUMN);
    assert!(rr[0] >= rr[1]);
    assert_eq!(out.text_column("doc").unwrap()[0], "red apple pie");

    let too_many = SearchOptions {
        k: 2,
        n_rerank: Some(3),
        return_scores: false,
    };
    assert!(sem_search(&session, &t, "doc", "x", &too_many).is_err());
    let no_reranker = Session::builder().embedder(HashEmbedder::new(32, 1)).build();
    assert!(sem_search(&no_reranker, &t, "doc", "x", &opts).is_err());
}

#[test]
fn sim_join_with_short_right_table_returns_all() {
    let embedder = HashEmbedder::new(32, 1);
    let right = indexed(&corpus()[..2], &embedder);
    let left = Table::new(vec![Column::text("q", ["apple", "sky"])]).unwrap();
    let session = Session::builder().embedder(embedder).build();
    let out = sem_sim_join(&session, &left, &right, "q", "doc", 5, true).unwrap();
    assert_eq!(out.row_count(), 4);
    assert_eq!(out.schema().names().collect::<Vec<_>>(), ["q", "doc", SCORE_COLUMN]);
    assert!(sem_sim_join(&session, &left, &right, "q", "doc", 0, false).is_err());
}

#[test]
fn clustering_is_deterministic_and_in_range() {
    let embedder = HashEmbedder::new(32, 1);
    let t = indexed(&corpus(), &embedder);
    let session = Session::builder().embedder(embedder).seed(5).build();
    let a = sem_cluster_by(&session, &t, "doc", 3, true).unwrap();
    let b = sem_cluster_by(&session, &t, "doc", 3, true).unwrap();
    assert_eq!(a.column(CLUSTER_COLUMN).unwrap().values, b.column(CLUSTER_COLUMN).unwrap().values);
    for v in &a.column(CLUSTER_COLUMN).unwrap().values {
        let Value::Int(c) = v else { panic!("{v:?}") };
        assert!((0..3).contains(c));
    }
    assert!(scores(&a, CENTROID_SCORE_COLUMN).iter().all(|s| (-1.0..=1.0).contains(s)));
    assert!(sem_cluster_by(&session, &t, "doc", 0, false).is_err());
    assert!(sem_cluster_by(&session, &t, "doc", 7, false).is_err());
}

#[test]
fn embedder_id_round_trips() {
    let e = HashEmbedder::new(24, 77);
    let back = HashEmbedder::from_id(e.id()).unwrap();
    assert_eq!(back.embed_one("same text"), e.embed_one("same text"));
    assert!(HashEmbedder::from_id("hash-ngram:dim=0:seed=1").is_none());
    assert!(HashEmbedder::from_id("other").is_none());
}
