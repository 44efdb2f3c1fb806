use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use semops::bench::{bench_ranking, BenchOptions};
use semops::index::{cosine, top_k, HashEmbedder, SimIndex};
use semops::ops::topk::Algorithm;
use semops::pipeline::{run_pipeline, Pipeline};
use semops::table::{load_csv, write_csv_to};
use semops::{sem_index, Session};

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

#[derive(Parser)]
#[command(name = "semops", version, about = "Semantic operators over CSV tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a text column and persist a flat similarity index.
    Index {
        csv: PathBuf,
        column: String,
        dir: PathBuf,
        #[arg(long, default_value_t = 256)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        embed_seed: u64,
    },
    /// Execute a pipeline file and report per-op metrics as JSON.
    Run {
        pipeline: PathBuf,
        /// Write metrics here instead of stdout.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Nearest rows of a persisted index to a query.
    Search {
        dir: PathBuf,
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Print the matching rows of this CSV instead of bare row ids.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Hidden-key ranking benchmark; prints a JSON report.
    Bench {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Comma-separated noise temperatures.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        noise: Vec<f64>,
        /// Comma-separated algorithms: quadratic, heap, quickselect.
        #[arg(long, value_delimiter = ',', default_value = "quadratic,heap,quickselect")]
        algo: Vec<Algorithm>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure::Validation(anyhow!("{msg}"))
}

fn index(csv: PathBuf, column: String, dir: PathBuf, dim: usize, seed: u64) -> Result<(), Failure> {
    if dim == 0 {
        return Err(invalid("--dim must be positive"));
    }
    let table = load_csv(&csv).with_context(|| format!("reading {}", csv.display()))?;
    if table.column_index(&column).is_none() {
        return Err(invalid(format!("{} has no column {column:?}", csv.display())));
    }
    let session = Session::builder().embedder(HashEmbedder::new(dim, seed)).build();
    sem_index(&session, &table, &column, &dir)?;
    println!("indexed {} rows of {column:?} into {}", table.row_count(), dir.display());
    Ok(())
}

fn run(path: PathBuf, metrics_path: Option<PathBuf>) -> Result<(), Failure> {
    let pipeline = Pipeline::load(&path).map_err(|e| Failure::Validation(e.into()))?;
    let writes_output = pipeline.spec.output.is_some();
    match run_pipeline(&pipeline) {
        Ok((table, metrics)) => {
            let json = metrics.to_json();
            match &metrics_path {
                Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
                // stdout carries the CSV when the pipeline names no output
                None if writes_output => println!("{json}"),
                None => eprintln!("{json}"),
            }
            if !writes_output {
                write_csv_to(&table, std::io::stdout().lock())?;
            }
            Ok(())
        }
        Err(e) if e.is_validation() => Err(Failure::Validation(e.into())),
        Err(e) => {
            if let Some(m) = e.metrics() {
                eprintln!("{}", m.to_json());
            }
            Err(Failure::Runtime(e.into()))
        }
    }
}

fn search(dir: PathBuf, query: String, k: usize, csv: Option<PathBuf>) -> Result<(), Failure> {
    if k == 0 {
        return Err(invalid("--k must be at least 1"));
    }
    let index = SimIndex::load(&dir).with_context(|| format!("loading index {}", dir.display()))?;
    let embedder = HashEmbedder::from_id(&index.manifest().embedder_id)
        .ok_or_else(|| anyhow!("index built with unknown embedder {:?}", index.manifest().embedder_id))?;
    let q = embedder.embed_one(&query);
    let scored = (0..index.row_count()).map(|i| (i, cosine(&q, index.vector(i)))).collect();
    let hits = top_k(scored, k);
    match csv {
        Some(path) => {
            let table = load_csv(&path).with_context(|| format!("reading {}", path.display()))?;
            if table.row_count() != index.row_count() {
                return Err(invalid(format!(
                    "{} has {} rows, index has {}",
                    path.display(),
                    table.row_count(),
                    index.row_count()
                )));
            }
            let rows: Vec<_> = hits.iter().map(|&(i, _)| semops::RowId(i)).collect();
            write_csv_to(&table.take(&rows), std::io::stdout().lock())?;
        }
        None => {
            for (rank, (row, score)) in hits.iter().enumerate() {
                println!("{}\t{row}\t{score:.6}", rank + 1);
            }
        }
    }
    Ok(())
}

fn bench(n: usize, k: usize, trials: usize, noise: Vec<f64>, algo: Vec<Algorithm>, seed: u64) -> Result<(), Failure> {
    if n == 0 || k == 0 || trials == 0 {
        return Err(invalid("--n, --k and --trials must be positive"));
    }
    if noise.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(invalid("--noise values must be finite and non-negative"));
    }
    let opts = BenchOptions {
        n,
        k,
        trials,
        seed,
        ..BenchOptions::default()
    };
    let report = bench_ranking(&algo, &noise, &opts)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index {
            csv,
            column,
            dir,
            dim,
            embed_seed,
        } => index(csv, column, dir, dim, embed_seed),
        Command::Run { pipeline, metrics } => run(pipeline, metrics),
        Command::Search { dir, query, k, csv } => search(dir, query, k, csv),
        Command::Bench {
            n,
            k,
            trials,
            noise,
            algo,
            seed,
        } => bench(n, k, trials, noise, algo, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
