//! Corpus I/O, the synthetic corpus generator and the command workflows
//! behind the CLI: build-memory, solve, eval, ablate, transfer and inspect.
//!
//! Corpus files are line-delimited JSON records
//! `{"id", "text", "objective", "requirements", "source"}` where
//! `requirements` maps names to numbers and may be omitted.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ConfigError, ExecutorKind};
use crate::construction::{baseline_attempt, build_memory, BuildError, BuildReport};
use crate::domain::{Extracted, GroundTruth, Problem, Space};
use crate::engine::{SolveError, SolveTrace, Solver, Verdict};
use crate::provider::{CallLog, Gateway, ProviderError};
use crate::sandbox::{judge, Executor, Sandbox, SandboxError, SandboxPolicy, StubExecutor};
use crate::store::{MemoryStore, StoreError, StoreManifest, StoreStats};

pub const REPORT_FILE: &str = "build_report.json";
pub const CONSTRUCTION_LOG_FILE: &str = "construction_log.jsonl";

/// Process exit codes used by the CLI.
pub mod exit {
    pub const OK: i32 = 0;
    /// The solver ran but every planned path failed.
    pub const FAILED_ALL_PATHS: i32 = 1;
    /// Bad arguments or configuration.
    pub const USAGE: i32 = 2;
    /// Unreadable or invalid corpus, problem or benchmark input.
    pub const INPUT: i32 = 3;
    /// Missing, corrupt or empty memory store.
    pub const STORE: i32 = 4;
    /// LLM provider failure.
    pub const PROVIDER: i32 = 5;
    /// Execution environment unavailable.
    pub const ENVIRONMENT: i32 = 6;
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{0}: no problems")]
    NoProblems(PathBuf),
    #[error("problem {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("corpus and evaluation set share ids: {}", .0.join(", "))]
    Overlap(Vec<String>),
    #[error("ratio {0} is outside (0, 1]")]
    BadRatio(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("execution environment: {0}")]
    Sandbox(#[from] SandboxError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::BadRatio(_) => exit::USAGE,
            BenchError::Io { .. }
            | BenchError::Parse { .. }
            | BenchError::NoProblems(_)
            | BenchError::MissingGroundTruth(_)
            | BenchError::Overlap(_)
            | BenchError::Build(BuildError::EmptyCorpus) => exit::INPUT,
            BenchError::Store(_) | BenchError::Solve(SolveError::NoMemory) => exit::STORE,
            BenchError::Provider(_) => exit::PROVIDER,
            BenchError::Sandbox(_)
            | BenchError::Build(BuildError::Environment(_))
            | BenchError::Solve(SolveError::Environment(_))
            | BenchError::Build(BuildError::Pool(_))
            | BenchError::Pool(_) => exit::ENVIRONMENT,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProblemRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    requirements: BTreeMap<String, f64>,
    #[serde(default)]
    source: String,
}

impl From<ProblemRecord> for Problem {
    fn from(r: ProblemRecord) -> Self {
        Problem {
            id: r.id,
            text: r.text,
            ground_truth: r.objective.map(|objective| GroundTruth { objective, requirements: r.requirements }),
            source: r.source,
        }
    }
}

impl From<&Problem> for ProblemRecord {
    fn from(p: &Problem) -> Self {
        ProblemRecord {
            id: p.id.clone(),
            text: p.text.clone(),
            objective: p.ground_truth.as_ref().map(|g| g.objective),
            requirements: p.ground_truth.as_ref().map(|g| g.requirements.clone()).unwrap_or_default(),
            source: p.source.clone(),
        }
    }
}

/// Reads a problem file. Blank lines are skipped; ids must be unique.
pub fn read_problems(path: &Path) -> Result<Vec<Problem>, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| BenchError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let record: ProblemRecord = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        if record.text.trim().is_empty() {
            return Err(parse(format!("problem {} has empty text", record.id)));
        }
        if !seen.insert(record.id.clone()) {
            return Err(parse(format!("duplicate id {}", record.id)));
        }
        out.push(record.into());
    }
    Ok(out)
}

/// Like [`read_problems`] but rejects empty files and unlabeled problems.
pub fn read_labeled(path: &Path) -> Result<Vec<Problem>, BenchError> {
    let problems = read_problems(path)?;
    if problems.is_empty() {
        return Err(BenchError::NoProblems(path.to_path_buf()));
    }
    if let Some(p) = problems.iter().find(|p| p.ground_truth.is_none()) {
        return Err(BenchError::MissingGroundTruth(p.id.clone()));
    }
    Ok(problems)
}

/// Reads one problem: the first record of a problem file, or, when the file
/// is not in record form, its whole content with the file stem as id.
pub fn read_problem(path: &Path) -> Result<Problem, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().find(|l| !l.trim().is_empty());
    if let Some(record) = first.and_then(|l| serde_json::from_str::<ProblemRecord>(l).ok()) {
        return Ok(record.into());
    }
    if text.trim().is_empty() {
        return Err(BenchError::NoProblems(path.to_path_buf()));
    }
    Ok(Problem {
        id: path.file_stem().map_or("problem".into(), |s| s.to_string_lossy().into_owned()),
        text: text.trim().to_string(),
        ground_truth: None,
        source: path.display().to_string(),
    })
}

pub fn write_problems(path: &Path, problems: &[Problem]) -> Result<(), BenchError> {
    let body: String = problems
        .iter()
        .map(|p| serde_json::to_string(&ProblemRecord::from(p)).expect("record serializes") + "\n")
        .collect();
    fs::write(path, body).map_err(io_err(path))
}

fn write_text(path: &Path, body: &str) -> Result<(), BenchError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, body).map_err(io_err(path))
}

// Synthetic corpus ----------------------------------------------------------

/// Problem families of the synthetic generator.
pub const FAMILIES: [&str; 4] = ["knapsack", "assignment", "diet", "production"];

fn knapsack(rng: &mut ChaCha8Rng) -> (String, f64) {
    let n = rng.random_range(4..=6);
    let weights: Vec<u32> = (0..n).map(|_| rng.random_range(2..=9)).collect();
    let values: Vec<u32> = (0..n).map(|_| rng.random_range(5..=30)).collect();
    let capacity = weights.iter().sum::<u32>() / 2;
    let best = (0u32..1 << n)
        .filter(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| weights[i]).sum::<u32>() <= capacity)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| values[i]).sum::<u32>())
        .max()
        .unwrap_or(0);
    let items: Vec<String> = (0..n)
        .map(|i| format!("item {} (weight {}, value {})", i + 1, weights[i], values[i]))
        .collect();
    let text = format!(
        "Knapsack selection problem\nA courier can carry at most {capacity} kg. Available: {}. \
         Each item is taken whole or not at all. Maximize the total value carried.",
        items.join(", ")
    );
    (text, f64::from(best))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn assignment(rng: &mut ChaCha8Rng) -> (String, f64) {
    let n = rng.random_range(3..=4);
    let cost: Vec<Vec<u32>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(1..=20)).collect()).collect();
    let best = permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(w, &t)| cost[w][t]).sum::<u32>())
        .min()
        .unwrap_or(0);
    let rows: Vec<String> = cost
        .iter()
        .enumerate()
        .map(|(w, r)| {
            let r: Vec<String> = r.iter().map(u32::to_string).collect();
            format!("worker {} costs [{}]", w + 1, r.join(", "))
        })
        .collect();
    let text = format!(
        "Worker-task assignment problem\nAssign {n} workers to {n} tasks, one task each. {}. \
         Minimize the total assignment cost.",
        rows.join("; ")
    );
    (text, f64::from(best))
}

fn diet(rng: &mut ChaCha8Rng) -> (String, f64) {
    let price = [rng.random_range(2..=6u32), rng.random_range(2..=6u32)];
    let protein = [rng.random_range(2..=6u32), rng.random_range(1..=4u32)];
    let fiber = [rng.random_range(1..=3u32), rng.random_range(2..=5u32)];
    let need = [rng.random_range(10..=20u32), rng.random_range(8..=16u32)];
    let mut best = u32::MAX;
    for a in 0..=12u32 {
        for b in 0..=12u32 {
            if a * protein[0] + b * protein[1] >= need[0] && a * fiber[0] + b * fiber[1] >= need[1] {
                best = best.min(a * price[0] + b * price[1]);
            }
        }
    }
    let text = format!(
        "Diet cost minimization problem\nOats cost {} per serving and give {} g protein and {} g fiber; \
         beans cost {} per serving and give {} g protein and {} g fiber. At most 12 whole servings of each. \
         At least {} g protein and {} g fiber are required. Minimize the total cost.",
        price[0], protein[0], fiber[0], price[1], protein[1], fiber[1], need[0], need[1]
    );
    (text, f64::from(best))
}

fn production(rng: &mut ChaCha8Rng) -> (String, f64) {
    let profit = [rng.random_range(3..=9u32), rng.random_range(3..=9u32)];
    let labor = [rng.random_range(1..=4u32), rng.random_range(1..=4u32)];
    let material = [rng.random_range(1..=4u32), rng.random_range(1..=4u32)];
    let caps = [rng.random_range(12..=24u32), rng.random_range(12..=24u32)];
    let mut best = 0;
    for a in 0..=24u32 {
        for b in 0..=24u32 {
            if a * labor[0] + b * labor[1] <= caps[0] && a * material[0] + b * material[1] <= caps[1] {
                best = best.max(a * profit[0] + b * profit[1]);
            }
        }
    }
    let text = format!(
        "Production planning problem\nChairs earn {} and tables earn {} profit per unit. A chair needs {} labor hours \
         and {} units of wood; a table needs {} labor hours and {} units of wood. {} labor hours and {} units of wood \
         are available. Produce whole units only. Maximize the total profit.",
        profit[0], profit[1], labor[0], material[0], labor[1], material[1], caps[0], caps[1]
    );
    (text, f64::from(best))
}

/// Seeded micro-problems with optima found by exhaustive enumeration.
/// Families rotate in a shuffled order; ids are `{prefix}-{index:04}`.
pub fn synthetic_corpus(n: usize, seed: u64, prefix: &str) -> Vec<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = FAMILIES;
    order.shuffle(&mut rng);
    (0..n)
        .map(|i| {
            let family = order[i % order.len()];
            let (text, objective) = match family {
                "knapsack" => knapsack(&mut rng),
                "assignment" => assignment(&mut rng),
                "diet" => diet(&mut rng),
                _ => production(&mut rng),
            };
            Problem {
                id: format!("{prefix}-{i:04}"),
                text,
                ground_truth: Some(GroundTruth { objective, requirements: BTreeMap::new() }),
                source: format!("synthetic:{family}"),
            }
        })
        .collect()
}

// Runtime -------------------------------------------------------------------

/// Gateway, executor and configuration for one command.
pub struct Runtime {
    pub config: Config,
    pub gateway: Gateway,
    pub executor: Box<dyn Executor>,
}

impl Runtime {
    pub fn new(config: Config, gateway: Gateway, executor: Box<dyn Executor>) -> Self {
        Self { config, gateway, executor }
    }

    /// Builds backends from `config`. The mock provider receives
    /// `answer_key` so it can simulate solving those problems.
    pub fn from_config(config: &Config, answer_key: &[Problem]) -> Result<Self, BenchError> {
        let gateway = Gateway::from_config(config, answer_key)?;
        let executor: Box<dyn Executor> = match config.executor {
            ExecutorKind::Stub => Box::new(StubExecutor),
            ExecutorKind::Harness => {
                let policy = SandboxPolicy {
                    timeout: Duration::from_secs_f64(config.exec_timeout_seconds),
                    max_output_bytes: config.max_output_bytes,
                    ..SandboxPolicy::default()
                };
                Box::new(
                    Sandbox::new(&config.harness_path, &config.python, policy)
                        .with_max_parallel(config.max_parallel_executions),
                )
            }
        };
        Ok(Self::new(config.clone(), gateway, executor))
    }

    fn pool(&self) -> Result<rayon::ThreadPool, BenchError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers.max(1))
            .build()
            .map_err(|e| BenchError::Pool(e.to_string()))
    }
}

fn disjointness(corpus: &[Problem], eval: &[Problem]) -> Result<(), BenchError> {
    let ids: BTreeSet<&str> = eval.iter().map(|p| p.id.as_str()).collect();
    let shared: Vec<String> = corpus.iter().filter(|p| ids.contains(p.id.as_str())).map(|p| p.id.clone()).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(BenchError::Overlap(shared))
    }
}

// build-memory --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuildOutput {
    pub report: BuildReport,
    pub manifest: StoreManifest,
}

impl BuildOutput {
    /// Human-readable report with the per-space cluster counts.
    pub fn render(&self) -> String {
        let r = &self.report;
        let count = |t| r.type_counts.get(&t).copied().unwrap_or(0);
        format!(
            "problems            {}\nnodes               {}\n  type A            {}\n  type B            {}\n  type C            {}\n\
             modeling clusters   {}\ncoding clusters     {}\nedges               {}\nsyntheses           {}\n\
             synthesis failures  {}\ndropped             {}\n",
            r.problems,
            r.nodes,
            count(crate::domain::SampleType::A),
            count(crate::domain::SampleType::B),
            count(crate::domain::SampleType::C),
            r.modeling_clusters,
            r.coding_clusters,
            self.manifest.counts.edges,
            r.syntheses,
            r.synthesis_failures,
            r.dropped,
        )
    }
}

/// Builds a store from `corpus` and saves it with its report and
/// construction log under `out_dir`.
pub fn build_memory_from(
    corpus: &[Problem],
    eval: Option<&[Problem]>,
    rt: &Runtime,
    out_dir: &Path,
) -> Result<(MemoryStore, BuildOutput), BenchError> {
    if let Some(eval) = eval {
        disjointness(corpus, eval)?;
    }
    if let Some(p) = corpus.iter().find(|p| p.ground_truth.is_none()) {
        return Err(BenchError::MissingGroundTruth(p.id.clone()));
    }
    let (store, report) = build_memory(corpus, &rt.gateway, rt.executor.as_ref(), &rt.config)?;
    let manifest = store.save(out_dir)?;
    write_text(&out_dir.join(CONSTRUCTION_LOG_FILE), &report.events_jsonl())?;
    let summary = BuildOutput { report, manifest };
    let json = serde_json::to_string_pretty(&summary).expect("report serializes") + "\n";
    write_text(&out_dir.join(REPORT_FILE), &json)?;
    Ok((store, summary))
}

pub fn cmd_build_memory(
    corpus_path: &Path,
    eval_path: Option<&Path>,
    config: &Config,
    out_dir: &Path,
) -> Result<BuildOutput, BenchError> {
    let corpus = read_problems(corpus_path)?;
    if corpus.is_empty() {
        return Err(BuildError::EmptyCorpus.into());
    }
    let eval = eval_path.map(read_problems).transpose()?;
    let rt = Runtime::from_config(config, &corpus)?;
    build_memory_from(&corpus, eval.as_deref(), &rt, out_dir).map(|(_, out)| out)
}

// solve ---------------------------------------------------------------------

pub fn load_store(dir: &Path) -> Result<MemoryStore, BenchError> {
    let store = MemoryStore::load(dir)?;
    if store.is_empty() {
        return Err(SolveError::NoMemory.into());
    }
    Ok(store)
}

/// Solves one problem file against a saved store and writes the trace.
pub fn cmd_solve(
    problem_path: &Path,
    store_dir: &Path,
    config: &Config,
    trace_path: &Path,
) -> Result<SolveTrace, BenchError> {
    let problem = read_problem(problem_path)?;
    let store = load_store(store_dir)?;
    let rt = Runtime::from_config(config, std::slice::from_ref(&problem))?;
    let trace = Solver::new(&rt.gateway, rt.executor.as_ref(), &rt.config).solve(&problem, &store)?;
    write_text(trace_path, &trace.to_jsonl())?;
    Ok(trace)
}

// eval ----------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Memory-guided pipeline.
    Dcm,
    /// Direct generate and execute without memory.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub id: String,
    /// Execution produced an answer.
    pub answered: bool,
    /// The answer matched the ground truth.
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Extracted>,
    pub expected: f64,
    pub executions: usize,
    pub backtracks: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: Mode,
    pub total: usize,
    pub correct: usize,
    /// Percentage, rounded to two decimals.
    pub accuracy: f64,
    /// Mean wall time over correctly solved problems, seconds.
    pub mean_time_solved: f64,
    /// Wall time summed over all problems, seconds.
    pub total_time: f64,
    pub results: Vec<ProblemResult>,
}

pub fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (correct as f64 * 10000.0 / total as f64).round() / 100.0
}

impl EvalSummary {
    fn from_results(mode: Mode, mut results: Vec<ProblemResult>) -> Self {
        results.sort_by(|a, b| a.id.cmp(&b.id));
        let total = results.len();
        let correct = results.iter().filter(|r| r.correct).count();
        let solved_time: f64 = results.iter().filter(|r| r.correct).map(|r| r.wall_time).sum();
        Self {
            mode,
            total,
            correct,
            accuracy: percent(correct, total),
            mean_time_solved: if correct == 0 { 0.0 } else { solved_time / correct as f64 },
            total_time: results.iter().map(|r| r.wall_time).sum(),
            results,
        }
    }

    pub fn accuracy_label(&self) -> String {
        format!("{:.2}%", self.accuracy)
    }

    pub fn results_jsonl(&self) -> String {
        self.results
            .iter()
            .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
            .collect()
    }

    pub fn render(&self) -> String {
        format!(
            "mode        {:?}\nproblems    {}\ncorrect     {}\naccuracy    {}\nmean time   {:.3}s per solved problem\ntotal time  {:.3}s\n",
            self.mode,
            self.total,
            self.correct,
            self.accuracy_label(),
            self.mean_time_solved,
            self.total_time
        )
    }
}

fn score(problem: &Problem, answer: Option<Extracted>, config: &Config) -> (bool, bool, Option<Extracted>) {
    let truth = problem.ground_truth.as_ref().expect("benchmark problems are labeled");
    let correct = answer.as_ref().is_some_and(|a| judge(a, truth, config.tolerance()));
    (answer.is_some(), correct, answer)
}

fn evaluate_one(
    problem: &Problem,
    store: Option<&MemoryStore>,
    rt: &Runtime,
    mode: Mode,
) -> Result<(ProblemResult, Option<SolveTrace>), BenchError> {
    let expected = problem.ground_truth.as_ref().map_or(f64::NAN, |g| g.objective);
    match (mode, store) {
        (Mode::Dcm, Some(store)) => {
            let trace = Solver::new(&rt.gateway, rt.executor.as_ref(), &rt.config).solve(problem, store)?;
            let answer = (trace.final_verdict == Verdict::Solved).then(|| trace.answer.clone()).flatten();
            let (answered, correct, answer) = score(problem, answer, &rt.config);
            let result = ProblemResult {
                id: problem.id.clone(),
                answered,
                correct,
                answer,
                expected,
                executions: trace.executions(),
                backtracks: trace.backtracks(),
                wall_time: trace.total_wall_time,
            };
            Ok((result, Some(trace)))
        }
        (Mode::Dcm, None) => Err(SolveError::NoMemory.into()),
        (Mode::Baseline, _) => {
            let started = Instant::now();
            let run = baseline_attempt(&rt.gateway, rt.executor.as_ref(), &problem.text, 1, &mut CallLog::new())?;
            let wall_time = if rt.config.record_timing { started.elapsed().as_secs_f64() } else { 0.0 };
            let answer = run.execution.is_success().then_some(run.execution.extracted).flatten();
            let (answered, correct, answer) = score(problem, answer, &rt.config);
            let result = ProblemResult {
                id: problem.id.clone(),
                answered,
                correct,
                answer,
                expected,
                executions: 1,
                backtracks: 0,
                wall_time,
            };
            Ok((result, None))
        }
    }
}

/// Evaluates labeled problems in parallel (`workers` threads); results are
/// sorted by id. Traces are returned in the same order for DCM mode.
pub fn evaluate(
    problems: &[Problem],
    store: Option<&MemoryStore>,
    rt: &Runtime,
    mode: Mode,
) -> Result<(EvalSummary, Vec<SolveTrace>), BenchError> {
    if problems.is_empty() {
        return Err(BenchError::NoProblems(PathBuf::from("<benchmark>")));
    }
    if let Some(p) = problems.iter().find(|p| p.ground_truth.is_none()) {
        return Err(BenchError::MissingGroundTruth(p.id.clone()));
    }
    let outcomes: Vec<_> = rt
        .pool()?
        .install(|| problems.par_iter().map(|p| evaluate_one(p, store, rt, mode)).collect::<Vec<_>>());
    let mut results = Vec::with_capacity(outcomes.len());
    let mut traces = Vec::new();
    for outcome in outcomes {
        let (result, trace) = outcome?;
        results.push(result);
        traces.extend(trace);
    }
    traces.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    Ok((EvalSummary::from_results(mode, results), traces))
}

/// Evaluates a benchmark file and optionally writes per-problem results
/// (and, in DCM mode, traces) as JSON lines.
pub fn cmd_eval(
    benchmark_path: &Path,
    store_dir: Option<&Path>,
    config: &Config,
    mode: Mode,
    results_path: Option<&Path>,
) -> Result<EvalSummary, BenchError> {
    let problems = read_labeled(benchmark_path)?;
    let store = match mode {
        Mode::Dcm => Some(load_store(store_dir.ok_or(SolveError::NoMemory)?)?),
        Mode::Baseline => None,
    };
    let rt = Runtime::from_config(config, &problems)?;
    let (summary, traces) = evaluate(&problems, store.as_ref(), &rt, mode)?;
    if let Some(path) = results_path {
        write_text(path, &summary.results_jsonl())?;
        if !traces.is_empty() {
            let body: String = traces.iter().map(SolveTrace::to_jsonl).collect();
            write_text(&path.with_extension("traces.jsonl"), &body)?;
        }
    }
    Ok(summary)
}

// ablate --------------------------------------------------------------------

pub const DEFAULT_RATIOS: [f64; 4] = [0.1, 0.4, 0.7, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ratio: f64,
    pub nodes: usize,
    pub modeling_clusters: usize,
    pub coding_clusters: usize,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
    /// Whether accuracy never decreases as the budget grows (reported, not enforced).
    pub monotone: bool,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = String::from("budget  nodes  modeling  coding  accuracy  mean time\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:>5.0}%  {:>5}  {:>8}  {:>6}  {:>8}  {:>8.3}s\n",
                r.ratio * 100.0,
                r.nodes,
                r.modeling_clusters,
                r.coding_clusters,
                r.summary.accuracy_label(),
                r.summary.mean_time_solved
            ));
        }
        out.push_str(&format!("monotone: {}\n", if self.monotone { "yes" } else { "no" }));
        out
    }
}

/// Evaluates `problems` over seeded subsamples of `store`, one row per ratio.
pub fn ablate(
    store: &MemoryStore,
    ratios: &[f64],
    seed: u64,
    problems: &[Problem],
    rt: &Runtime,
) -> Result<AblationTable, BenchError> {
    if let Some(&bad) = ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
        return Err(BenchError::BadRatio(bad));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let sub = store.subsample(ratio, seed)?;
        let (summary, _) = evaluate(problems, Some(&sub), rt, Mode::Dcm)?;
        rows.push(AblationRow {
            ratio,
            nodes: sub.node_count(),
            modeling_clusters: sub.cluster_count(Space::Modeling),
            coding_clusters: sub.cluster_count(Space::Coding),
            summary,
        });
    }
    let mut by_ratio: Vec<&AblationRow> = rows.iter().collect();
    by_ratio.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let monotone = by_ratio.windows(2).all(|w| w[0].summary.accuracy <= w[1].summary.accuracy);
    Ok(AblationTable { seed, rows, monotone })
}

pub fn cmd_ablate(
    store_dir: &Path,
    ratios: &[f64],
    seed: u64,
    benchmark_path: &Path,
    config: &Config,
) -> Result<AblationTable, BenchError> {
    let problems = read_labeled(benchmark_path)?;
    let store = load_store(store_dir)?;
    let rt = Runtime::from_config(config, &problems)?;
    ablate(&store, ratios, seed, &problems, &rt)
}

// transfer ------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    /// Chat model that built the memory, `unknown` without provenance.
    pub construction_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construction_seed: Option<u64>,
    pub inference_model: String,
    pub inference_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub summary: EvalSummary,
}

impl TransferRow {
    pub fn render(&self) -> String {
        let mut out = format!(
            "memory built by  inference model  accuracy  mean time\n{:<16}  {:<15}  {:>8}  {:>8.3}s\n",
            self.construction_model,
            self.inference_model,
            self.summary.accuracy_label(),
            self.summary.mean_time_solved
        );
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

/// Evaluates the runtime's inference backend over a store built by another.
pub fn transfer(store: &MemoryStore, problems: &[Problem], rt: &Runtime) -> Result<TransferRow, BenchError> {
    let mut warnings = Vec::new();
    let construction_model = match &store.provenance().chat_model {
        Some(m) => m.clone(),
        None => {
            let w = "store has no construction provenance".to_string();
            tracing::warn!("{w}");
            warnings.push(w);
            "unknown".into()
        }
    };
    let (summary, _) = evaluate(problems, Some(store), rt, Mode::Dcm)?;
    Ok(TransferRow {
        construction_model,
        construction_seed: store.provenance().seed,
        inference_model: rt.gateway.model().to_string(),
        inference_seed: rt.config.seed,
        warnings,
        summary,
    })
}

pub fn cmd_transfer(store_dir: &Path, config: &Config, benchmark_path: &Path) -> Result<TransferRow, BenchError> {
    let problems = read_labeled(benchmark_path)?;
    let store = load_store(store_dir)?;
    let rt = Runtime::from_config(config, &problems)?;
    transfer(&store, &problems, &rt)
}

// inspect -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterInfo {
    pub space: Space,
    pub id: u32,
    pub members: usize,
    pub knowledge_version: u32,
    pub pending: usize,
    pub approach: usize,
    pub checklist: usize,
    pub pitfall: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inspection {
    pub manifest: StoreManifest,
    pub stats: StoreStats,
    pub clusters: Vec<ClusterInfo>,
    pub edges: Vec<(String, String, u64)>,
}

pub fn inspect(store: &MemoryStore) -> Inspection {
    let clusters = [Space::Modeling, Space::Coding]
        .into_iter()
        .flat_map(|space| store.clusters(space))
        .map(|c| ClusterInfo {
            space: c.space,
            id: c.id.0,
            members: c.members.len(),
            knowledge_version: c.knowledge_version,
            pending: c.pending_phis.len(),
            approach: c.knowledge.approach.len(),
            checklist: c.knowledge.checklist.len(),
            pitfall: c.knowledge.pitfall.len(),
        })
        .collect();
    let edges = store
        .graph()
        .edges()
        .map(|(m, c, w)| (format!("m{}", m.0), format!("c{}", c.0), w))
        .collect();
    Inspection { manifest: store.manifest(), stats: store.stats(), clusters, edges }
}

pub fn cmd_inspect(store_dir: &Path) -> Result<Inspection, BenchError> {
    Ok(inspect(&MemoryStore::load(store_dir)?))
}
