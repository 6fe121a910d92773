use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dcm_core::bench::{self, exit, BenchError, Mode, DEFAULT_RATIOS};
use dcm_core::engine::Verdict;
use dcm_core::Config;
use serde::Serialize;

/// Dual-cluster memory agent for optimization modeling.
///
/// Exit codes: 0 ok, 1 every planned path failed (solve), 2 usage or
/// configuration error, 3 bad input data, 4 missing or corrupt memory store,
/// 5 provider failure, 6 execution environment unavailable.
#[derive(Parser)]
#[command(name = "dcm", version)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. --set seed=11.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Print machine-readable JSON instead of a table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a memory store from a labeled corpus.
    BuildMemory {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation set that must not share ids with the corpus.
        #[arg(long)]
        eval: Option<PathBuf>,
    },
    /// Solve one problem with a memory store and write its trace.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
    },
    /// Accuracy and timing over a labeled benchmark.
    Eval {
        #[arg(long)]
        benchmark: PathBuf,
        /// Required unless --baseline.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Generate and execute directly, without memory.
        #[arg(long)]
        baseline: bool,
        /// Per-problem results as JSON lines.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Accuracy under memory budgets (seeded node subsamples).
    Ablate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATIOS.to_vec())]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate the configured inference backend over a store built by another.
    Transfer {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        benchmark: PathBuf,
    },
    /// Cluster and graph statistics of a store.
    Inspect {
        #[arg(long)]
        store: PathBuf,
    },
    /// Write a seeded synthetic corpus with brute-forced optima.
    SynthCorpus {
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "p")]
        prefix: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit<T: Serialize>(json: bool, value: &T, table: impl FnOnce() -> String) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value).context("serializing output")?);
    } else {
        print!("{}", table());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32, BenchError> {
    let config = Config::load_with_overrides(cli.config.as_deref(), &cli.overrides)?;
    let json = cli.json;
    let print = |r: anyhow::Result<()>| {
        if let Err(e) = r {
            eprintln!("error: {e:#}");
        }
    };
    match cli.command {
        Command::BuildMemory { corpus, out, eval } => {
            let output = bench::cmd_build_memory(&corpus, eval.as_deref(), &config, &out)?;
            print(emit(json, &output, || output.render()));
        }
        Command::Solve { problem, store, trace } => {
            let t = bench::cmd_solve(&problem, &store, &config, &trace)?;
            #[derive(Serialize)]
            struct Out<'a> {
                problem_id: &'a str,
                verdict: Verdict,
                answer: &'a Option<dcm_core::Extracted>,
                executions: usize,
                backtracks: usize,
                wall_time: f64,
                trace: String,
            }
            let out = Out {
                problem_id: &t.problem_id,
                verdict: t.final_verdict,
                answer: &t.answer,
                executions: t.executions(),
                backtracks: t.backtracks(),
                wall_time: t.total_wall_time,
                trace: trace.display().to_string(),
            };
            print(emit(json, &out, || {
                let mut s = format!("problem     {}\nverdict     {:?}\n", out.problem_id, out.verdict);
                if let Some(a) = out.answer {
                    s.push_str(&format!("objective   {}\n", a.objective));
                    for (k, v) in &a.requirements {
                        s.push_str(&format!("{k:<11} {v}\n"));
                    }
                }
                s.push_str(&format!(
                    "executions  {}\nbacktracks  {}\nwall time   {:.3}s\ntrace       {}\n",
                    out.executions, out.backtracks, out.wall_time, out.trace
                ));
                s
            }));
            if t.final_verdict == Verdict::FailedAllPaths {
                return Ok(exit::FAILED_ALL_PATHS);
            }
        }
        Command::Eval { benchmark, store, baseline, results } => {
            let mode = if baseline { Mode::Baseline } else { Mode::Dcm };
            let summary = bench::cmd_eval(&benchmark, store.as_deref(), &config, mode, results.as_deref())?;
            print(emit(json, &summary, || summary.render()));
        }
        Command::Ablate { store, benchmark, ratios, seed } => {
            let table = bench::cmd_ablate(&store, &ratios, seed, &benchmark, &config)?;
            print(emit(json, &table, || table.render()));
        }
        Command::Transfer { store, benchmark } => {
            let row = bench::cmd_transfer(&store, &config, &benchmark)?;
            print(emit(json, &row, || row.render()));
        }
        Command::Inspect { store } => {
            let info = bench::cmd_inspect(&store)?;
            print(emit(json, &info, || {
                let mut s = format!(
                    "nodes {}  modeling clusters {}  coding clusters {}  edges {}  total weight {}\n",
                    info.stats.nodes,
                    info.stats.modeling.clusters,
                    info.stats.coding.clusters,
                    info.stats.edges,
                    info.stats.total_weight
                );
                for c in &info.clusters {
                    s.push_str(&format!(
                        "{}{:<4} members {:>3}  version {}  pending {}  approach {} checklist {} pitfall {}\n",
                        c.space.prefix(),
                        c.id,
                        c.members,
                        c.knowledge_version,
                        c.pending,
                        c.approach,
                        c.checklist,
                        c.pitfall
                    ));
                }
                for (m, c, w) in &info.edges {
                    s.push_str(&format!("{m} -> {c}  weight {w}\n"));
                }
                s
            }));
        }
        Command::SynthCorpus { count, seed, prefix, out } => {
            let corpus = bench::synthetic_corpus(count, seed, &prefix);
            bench::write_problems(&out, &corpus)?;
            eprintln!("wrote {} problems to {}", corpus.len(), out.display());
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
