use std::path::Path;
use std::process::Command;

use semops::pipeline::{run_pipeline, Pipeline, PipelineError};
use semops::read_csv;

const CLAIMS: &str = "claim,score\n\
Paris is the capital of France,9\n\
Lyon is the capital of France,1\n\
Berlin is the capital of Germany,8\n\
Bonn is the capital of Germany,2\n";

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn load(dir: &Path, toml: &str) -> Pipeline {
    Pipeline::load(write(dir, "pipeline.toml", toml)).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semops"))
}

const END_TO_END: &str = r#"
output = "out.csv"

[[inputs]]
name = "claims"
path = "claims.csv"

[[backends]]
id = "oracle"
kind = "keyed"
input = "claims"
key_column = "score"
filter_above = 5.0

[[backends]]
id = "mapper"
kind = "scripted"
default = "Europe"

[[ops]]
op = "sem_filter"
langex = "{claim} is true"
backend = "oracle"

[[ops]]
op = "sem_topk"
langex = "Which {claim} has the largest city?"
k = 1
algorithm = "heap"
backend = "oracle"

[[ops]]
op = "sem_map"
langex = "Name the continent of {claim}"
name = "continent"
backend = "mapper"
"#;

#[test]
fn end_to_end_run_writes_output_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "claims.csv", CLAIMS);
    let pipeline = load(dir.path(), END_TO_END);
    let (table, metrics) = run_pipeline(&pipeline).unwrap();
    assert_eq!(table.text_column("claim").unwrap(), ["Paris is the capital of France"]);
    assert_eq!(table.text_column("continent").unwrap(), ["Europe"]);
    let written = read_csv(std::fs::File::open(dir.path().join("out.csv")).unwrap()).unwrap();
    assert_eq!(written.text_column("continent").unwrap(), ["Europe"]);
    // 4 filter calls, 1 comparison, 1 map call
    assert_eq!(metrics.total.lm_calls, 6);
    assert_eq!(metrics.ops.keys().collect::<Vec<_>>(), ["1:sem_filter", "2:sem_topk", "3:sem_map"]);
    assert_eq!(metrics.rows["1:sem_filter"], 2);
    let json: serde_json::Value = serde_json::from_str(&metrics.to_json()).unwrap();
    assert_eq!(json["total"]["lm_calls"], 6);
}

#[test]
fn invalid_langex_fails_before_any_op_runs() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "claims.csv", CLAIMS);
    let toml = END_TO_END.replace("Name the continent of {claim}", "Name the continent of {country}");
    let err = run_pipeline(&load(dir.path(), &toml)).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(matches!(err, PipelineError::Validation { op: 3, .. }), "{err}");
    assert!(!dir.path().join("out.csv").exists());
}

#[test]
fn unknown_fields_and_backends_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "claims.csv", CLAIMS);
    let typo = END_TO_END.replace("output =", "outptu =");
    assert!(matches!(Pipeline::load(write(dir.path(), "a.toml", &typo)), Err(PipelineError::Parse(_))));
    let missing = END_TO_END.replace("backend = \"mapper\"", "backend = \"absent\"");
    assert!(run_pipeline(&load(dir.path(), &missing)).unwrap_err().is_validation());
}

#[test]
fn search_pipeline_makes_no_lm_calls() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "claims.csv", CLAIMS);
    let toml = r#"
[embedder]
dimension = 64

[[inputs]]
name = "claims"
path = "claims.csv"

[[ops]]
op = "sem_index"
column = "claim"
dir = "claim_index"

[[ops]]
op = "sem_search"
column = "claim"
query = "capital of Germany"
k = 2
return_scores = true
"#;
    let (table, metrics) = run_pipeline(&load(dir.path(), toml)).unwrap();
    assert_eq!(table.row_count(), 2);
    assert!(table.column("_score").is_ok());
    assert_eq!(metrics.total.lm_calls, 0);
    assert!(dir.path().join("claim_index").is_dir());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "claims.csv", CLAIMS);

    let ok = write(dir.path(), "ok.toml", END_TO_END);
    let out = bin().arg("run").arg(&ok).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["total"]["lm_calls"], 6);

    let bad = write(dir.path(), "bad.toml", &END_TO_END.replace("{claim} is true", "{nope} is true"));
    assert_eq!(bin().arg("run").arg(&bad).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("run").arg(dir.path().join("absent.toml")).output().unwrap().status.code(), Some(2));

    // a document longer than the context only shows up while running
    let long = format!(
        "{}\n[[ops]]\nop = \"sem_agg\"\nlangex = \"Summarize {{claim}}\"\nmax_context_chars = 560\nbackend = \"mapper\"\n",
        END_TO_END.replace("output = \"out.csv\"\n", "")
    );
    let runtime = write(dir.path(), "runtime.toml", &long);
    let out = bin().arg("run").arg(&runtime).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cli_index_search_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(dir.path(), "claims.csv", CLAIMS);
    let ix = dir.path().join("ix");
    let out = bin().args(["index"]).arg(&csv).arg("claim").arg(&ix).args(["--dim", "64"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin().arg("search").arg(&ix).arg("Germany").args(["--k", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 2);

    let out = bin().arg("search").arg(&ix).arg("Germany").args(["--k", "1", "--csv"]).arg(&csv).output().unwrap();
    let rows = read_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.row_count(), 1);

    assert_eq!(bin().arg("search").arg(&ix).arg("x").args(["--k", "0"]).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("index").arg(&csv).arg("nope").arg(&ix).output().unwrap().status.code(), Some(2));

    let out = bin().args(["bench", "--n", "20", "--k", "3", "--trials", "2", "--noise", "0,1", "--algo", "heap"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    assert_eq!(report["rows"][0]["mean_ndcg"], 1.0);
}
