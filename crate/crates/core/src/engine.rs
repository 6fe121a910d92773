//! Memory-guided solving.
//!
//! For each queued (modeling cluster, coding cluster) path: generate a model
//! from the modeling cluster's approach, check it against that cluster's
//! checklist, generate code from the coding cluster's approach, check it
//! against the coding checklist (plus the lexical library whitelist), then
//! execute. A failed run is repaired with the coding cluster's pitfalls and
//! checklist up to `repair_limit` times before the path is abandoned and the
//! next one is tried.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::domain::{ClusterId, ExecutionResult, Extracted, Knowledge, NodeId, Problem, SolutionPath, Space};
use crate::planner::{self, PlanError, Scored};
use crate::provider::format::{parse_block, parse_check, render_tier, CheckVerdict};
use crate::provider::{CallLog, Gateway, LlmRole, ProviderError, Slots};
use crate::sandbox::{Executor, SandboxError, SandboxPolicy};
use crate::store::MemoryStore;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no memory: the store is empty; run build-memory first")]
    NoMemory,
    #[error("execution environment: {0}")]
    Environment(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Solved,
    FailedAllPaths,
}

/// How a verification step concluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyOutcome {
    /// Empty checklist and nothing to flag; no verifier call.
    Vacuous,
    Pass,
    /// Verifier failed the artifact and supplied a revision, which was adopted.
    Revised,
    /// The lexical library check failed and the verifier offered no revision.
    FailedKept,
    /// Verifier reply unusable; treated as a pass.
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case")]
pub enum Step {
    GenerateModel { ok: bool, #[serde(default, skip_serializing_if = "Option::is_none")] error: Option<String> },
    VerifyModel { outcome: VerifyOutcome },
    GenerateCode { ok: bool, #[serde(default, skip_serializing_if = "Option::is_none")] error: Option<String> },
    VerifyCode { outcome: VerifyOutcome, #[serde(default, skip_serializing_if = "Vec::is_empty")] disallowed_imports: Vec<String> },
    Execute { attempt: usize, result: ExecutionResult },
    Repair { round: usize, ok: bool, #[serde(default, skip_serializing_if = "Option::is_none")] error: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathOutcome {
    Solved,
    /// Model or code generation produced nothing; nothing was executed.
    GenerationFailed,
    /// Every execution failed and the repair budget is spent.
    RepairsExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLog {
    pub position: usize,
    pub modeling_cluster: ClusterId,
    pub coding_cluster: ClusterId,
    pub steps: Vec<Step>,
    pub outcome: PathOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub calls: CallLog,
}

impl PathLog {
    pub fn executions(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Execute { .. })).count()
    }

    pub fn repairs(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Repair { .. })).count()
    }
}

/// Audit record of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub problem_id: String,
    pub retrieved_instances: Vec<Scored<NodeId>>,
    pub retrieved_clusters: Vec<Scored<ClusterId>>,
    pub candidates: Vec<ClusterId>,
    pub pool: Vec<SolutionPath>,
    pub used_global_fallback: bool,
    pub queue: Vec<SolutionPath>,
    pub planning_calls: CallLog,
    pub paths: Vec<PathLog>,
    pub final_verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Extracted>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub total_wall_time: f64,
}

impl SolveTrace {
    pub fn executions(&self) -> usize {
        self.paths.iter().map(PathLog::executions).sum()
    }

    /// Paths abandoned before the final one.
    pub fn backtracks(&self) -> usize {
        self.paths.iter().filter(|p| p.outcome != PathOutcome::Solved).count()
    }

    /// Every recorded chat call, planning first, then per path.
    pub fn all_calls(&self) -> impl Iterator<Item = &crate::provider::ChatRecord> {
        self.planning_calls.iter().chain(self.paths.iter().flat_map(|p| p.calls.iter()))
    }

    /// One JSON line per record: a plan header, one line per path, the verdict.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Header<'a> {
            kind: &'static str,
            problem_id: &'a str,
            retrieved_instances: &'a [Scored<NodeId>],
            retrieved_clusters: &'a [Scored<ClusterId>],
            candidates: &'a [ClusterId],
            pool: &'a [SolutionPath],
            used_global_fallback: bool,
            queue: &'a [SolutionPath],
            planning_calls: &'a CallLog,
        }
        #[derive(Serialize)]
        struct PathLine<'a> {
            kind: &'static str,
            #[serde(flatten)]
            path: &'a PathLog,
        }
        #[derive(Serialize)]
        struct Footer<'a> {
            kind: &'static str,
            final_verdict: Verdict,
            answer: &'a Option<Extracted>,
            error: &'a Option<String>,
            executions: usize,
            backtracks: usize,
            total_wall_time: f64,
        }
        let mut out = serde_json::to_string(&Header {
            kind: "plan",
            problem_id: &self.problem_id,
            retrieved_instances: &self.retrieved_instances,
            retrieved_clusters: &self.retrieved_clusters,
            candidates: &self.candidates,
            pool: &self.pool,
            used_global_fallback: self.used_global_fallback,
            queue: &self.queue,
            planning_calls: &self.planning_calls,
        })
        .expect("trace serializes");
        out.push('\n');
        for p in &self.paths {
            out.push_str(&serde_json::to_string(&PathLine { kind: "path", path: p }).expect("trace serializes"));
            out.push('\n');
        }
        out.push_str(
            &serde_json::to_string(&Footer {
                kind: "verdict",
                final_verdict: self.final_verdict,
                answer: &self.answer,
                error: &self.error,
                executions: self.executions(),
                backtracks: self.backtracks(),
                total_wall_time: self.total_wall_time,
            })
            .expect("trace serializes"),
        );
        out.push('\n');
        out
    }
}

fn guidance(items: &[String]) -> String {
    render_tier(items)
}

/// Runs the memory-guided pipeline for one problem.
pub struct Solver<'a> {
    gateway: &'a Gateway,
    executor: &'a dyn Executor,
    config: &'a Config,
    policy: SandboxPolicy,
}

impl<'a> Solver<'a> {
    pub fn new(gateway: &'a Gateway, executor: &'a dyn Executor, config: &'a Config) -> Self {
        Self {
            gateway,
            executor,
            config,
            policy: SandboxPolicy::default(),
        }
    }

    pub fn with_policy(mut self, policy: SandboxPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Modeling text conditioned on the modeling cluster's approach tier.
    pub fn generate_model(
        &self,
        problem: &str,
        knowledge: &Knowledge,
        log: &mut CallLog,
    ) -> Result<String, ProviderError> {
        let mut s = Slots::new();
        s.insert("phase".into(), "model".into());
        s.insert("problem".into(), problem.into());
        s.insert("guidance".into(), guidance(&knowledge.approach));
        self.gateway.chat_parsed(LlmRole::Generator, &s, log, parse_block)
    }

    /// One verification round against `checklist`. Extra `flags` are
    /// appended to the checklist and force a verifier call.
    fn verify(&self, artifact: &str, checklist: &[String], flags: &[String], log: &mut CallLog) -> (String, VerifyOutcome) {
        if checklist.is_empty() && flags.is_empty() {
            return (artifact.to_string(), VerifyOutcome::Vacuous);
        }
        let mut items = checklist.to_vec();
        items.extend(flags.iter().cloned());
        let mut s = Slots::new();
        s.insert("task".into(), "check".into());
        s.insert("candidate".into(), artifact.into());
        s.insert("cluster_summary".into(), render_tier(&items));
        match self.gateway.chat_parsed(LlmRole::Verifier, &s, log, parse_check) {
            Ok(CheckVerdict::Revise(revision)) => (revision, VerifyOutcome::Revised),
            Ok(CheckVerdict::Pass) if flags.is_empty() => (artifact.to_string(), VerifyOutcome::Pass),
            Ok(CheckVerdict::Pass) => (artifact.to_string(), VerifyOutcome::FailedKept),
            Err(e) => {
                tracing::warn!(error = %e, "verifier unusable; treating as pass");
                let outcome = if flags.is_empty() { VerifyOutcome::Unparsed } else { VerifyOutcome::FailedKept };
                (artifact.to_string(), outcome)
            }
        }
    }

    pub fn verify_model(&self, model: &str, knowledge: &Knowledge, log: &mut CallLog) -> (String, VerifyOutcome) {
        self.verify(model, &knowledge.checklist, &[], log)
    }

    /// Solver script conditioned on the model and the coding cluster's approach tier.
    pub fn generate_code(
        &self,
        problem: &str,
        model: &str,
        knowledge: &Knowledge,
        log: &mut CallLog,
    ) -> Result<String, ProviderError> {
        let mut s = Slots::new();
        s.insert("phase".into(), "code".into());
        s.insert("problem".into(), problem.into());
        s.insert("model".into(), model.into());
        s.insert("guidance".into(), guidance(&knowledge.approach));
        self.gateway.chat_parsed(LlmRole::Generator, &s, log, parse_block)
    }

    /// Checklist verification plus the lexical import whitelist.
    pub fn verify_code(&self, code: &str, knowledge: &Knowledge, log: &mut CallLog) -> (String, VerifyOutcome, Vec<String>) {
        let banned = self.policy.disallowed_imports(code);
        let flags: Vec<String> = if banned.is_empty() {
            Vec::new()
        } else {
            vec![format!(
                "imports only allowed libraries ({}); remove: {}",
                self.policy.allowed_libraries.join(", "),
                banned.join(", ")
            )]
        };
        let (code, outcome) = self.verify(code, &knowledge.checklist, &flags, log);
        (code, outcome, banned)
    }

    /// Fixer call conditioned on the coding cluster's pitfalls and checklist.
    pub fn repair(
        &self,
        problem: &str,
        code: &str,
        error: &str,
        knowledge: &Knowledge,
        log: &mut CallLog,
    ) -> Result<String, ProviderError> {
        let mut s = Slots::new();
        s.insert("problem".into(), problem.into());
        s.insert("code".into(), code.into());
        s.insert("error".into(), error.into());
        s.insert("pitfalls".into(), guidance(&knowledge.pitfall));
        s.insert("checklist".into(), guidance(&knowledge.checklist));
        self.gateway.chat_parsed(LlmRole::Fixer, &s, log, parse_block)
    }

    fn run_path(
        &self,
        position: usize,
        path: &SolutionPath,
        problem: &Problem,
        store: &MemoryStore,
    ) -> Result<(PathLog, Option<Extracted>), SolveError> {
        let empty = Knowledge::default();
        let k_model = store
            .cluster(Space::Modeling, path.modeling_cluster)
            .map_or(&empty, |c| &c.knowledge);
        let k_code = store
            .cluster(Space::Coding, path.coding_cluster)
            .map_or(&empty, |c| &c.knowledge);
        let mut log = PathLog {
            position,
            modeling_cluster: path.modeling_cluster,
            coding_cluster: path.coding_cluster,
            steps: Vec::new(),
            outcome: PathOutcome::GenerationFailed,
            model: None,
            code: None,
            calls: CallLog::new(),
        };

        let raw_model = match self.generate_model(&problem.text, k_model, &mut log.calls) {
            Ok(m) => {
                log.steps.push(Step::GenerateModel { ok: true, error: None });
                m
            }
            Err(e) => {
                log.steps.push(Step::GenerateModel { ok: false, error: Some(e.to_string()) });
                return Ok((log, None));
            }
        };
        let (model, outcome) = self.verify_model(&raw_model, k_model, &mut log.calls);
        log.steps.push(Step::VerifyModel { outcome });
        log.model = Some(model.clone());

        let raw_code = match self.generate_code(&problem.text, &model, k_code, &mut log.calls) {
            Ok(c) => {
                log.steps.push(Step::GenerateCode { ok: true, error: None });
                c
            }
            Err(e) => {
                log.steps.push(Step::GenerateCode { ok: false, error: Some(e.to_string()) });
                return Ok((log, None));
            }
        };
        let (mut code, outcome, banned) = self.verify_code(&raw_code, k_code, &mut log.calls);
        log.steps.push(Step::VerifyCode { outcome, disallowed_imports: banned });

        let mut result = self.executor.execute(&code)?;
        log.steps.push(Step::Execute { attempt: 0, result: result.clone() });
        let mut attempt = 0;
        for round in 1..=self.config.repair_limit {
            if result.is_success() {
                break;
            }
            match self.repair(&problem.text, &code, &result.error_payload(), k_code, &mut log.calls) {
                Ok(fixed) => {
                    log.steps.push(Step::Repair { round, ok: true, error: None });
                    code = fixed;
                    attempt += 1;
                    result = self.executor.execute(&code)?;
                    log.steps.push(Step::Execute { attempt, result: result.clone() });
                }
                Err(e) => log.steps.push(Step::Repair { round, ok: false, error: Some(e.to_string()) }),
            }
        }
        log.code = Some(code);
        if result.is_success() {
            log.outcome = PathOutcome::Solved;
            Ok((log, result.extracted))
        } else {
            log.outcome = PathOutcome::RepairsExhausted;
            Ok((log, None))
        }
    }

    /// Plans a queue from memory and works through it until a path yields an
    /// executable answer or the queue is exhausted.
    pub fn solve(&self, problem: &Problem, store: &MemoryStore) -> Result<SolveTrace, SolveError> {
        if store.is_empty() {
            return Err(SolveError::NoMemory);
        }
        let started = Instant::now();
        let mut trace = SolveTrace {
            problem_id: problem.id.clone(),
            retrieved_instances: Vec::new(),
            retrieved_clusters: Vec::new(),
            candidates: Vec::new(),
            pool: Vec::new(),
            used_global_fallback: false,
            queue: Vec::new(),
            planning_calls: CallLog::new(),
            paths: Vec::new(),
            final_verdict: Verdict::FailedAllPaths,
            answer: None,
            error: None,
            total_wall_time: 0.0,
        };
        let planned = self
            .gateway
            .embed(&problem.text)
            .map_err(|e| e.to_string())
            .and_then(|q| {
                planner::plan(&q, &problem.text, store, self.gateway, self.config, &mut trace.planning_calls)
                    .map_err(|e| match e {
                        PlanError::EmptyStore => SolveError::NoMemory.to_string(),
                        other => other.to_string(),
                    })
            });
        match planned {
            Ok(plan) => {
                trace.retrieved_instances = plan.instances;
                trace.retrieved_clusters = plan.clusters;
                trace.candidates = plan.candidates;
                trace.pool = plan.pool;
                trace.used_global_fallback = plan.used_global_fallback;
                trace.queue = plan.queue;
            }
            Err(e) => trace.error = Some(e),
        }
        for (position, path) in trace.queue.clone().iter().enumerate() {
            let (log, answer) = self.run_path(position, path, problem, store)?;
            trace.paths.push(log);
            if let Some(answer) = answer {
                trace.final_verdict = Verdict::Solved;
                trace.answer = Some(answer);
                break;
            }
        }
        if self.config.record_timing {
            trace.total_wall_time = started.elapsed().as_secs_f64();
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ExecStatus, RankSource};
    use crate::provider::{ChatBackend, ChatRequest, MockBackend};
    use crate::sandbox::{StubExecutor, StubOutcome};
    use crate::store::test_support::random_store;
    use std::sync::Arc;

    /// Generator returns the scripted outcome; verifier passes; fixer keeps failing.
    struct Scripted {
        outcome: StubOutcome,
    }

    impl ChatBackend for Scripted {
        fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
            Ok(match req.role {
                LlmRole::Generator if req.slots["phase"] == "model" => "```model\nmax x\n```".into(),
                LlmRole::Generator => format!("```python\nimport pulp\n{}\n```", self.outcome.to_directive()),
                LlmRole::Verifier => "PASS".into(),
                LlmRole::Selector => "RANK: 0,1,2".into(),
                LlmRole::Fixer => format!("```python\n{}\n# fix\n```", req.slots["code"]),
                _ => "NONE".into(),
            })
        }
    }

    fn gateway(outcome: StubOutcome) -> Gateway {
        Gateway::mock(MockBackend::new("m", 1, 6)).with_chat_backend(Arc::new(Scripted { outcome }))
    }

    fn problem() -> Problem {
        Problem {
            id: "p".into(),
            text: "maximize something".into(),
            ground_truth: None,
            source: String::new(),
        }
    }

    #[test]
    fn happy_path_is_one_execution() {
        let store = random_store(3, 30, 4, 6);
        let gw = gateway(StubOutcome::Success(Extracted { objective: 1.0, requirements: Default::default() }));
        let config = Config::default();
        let trace = Solver::new(&gw, &StubExecutor, &config).solve(&problem(), &store).unwrap();
        assert_eq!(trace.final_verdict, Verdict::Solved);
        assert_eq!(trace.executions(), 1);
        assert_eq!(trace.paths[0].repairs(), 0);
    }

    #[test]
    fn all_fail_spends_full_budget() {
        let store = random_store(3, 30, 4, 6);
        let gw = gateway(StubOutcome::RuntimeError("boom".into()));
        let config = Config::default();
        let trace = Solver::new(&gw, &StubExecutor, &config).solve(&problem(), &store).unwrap();
        assert_eq!(trace.final_verdict, Verdict::FailedAllPaths);
        assert_eq!(trace.queue.len(), 3);
        assert_eq!(trace.executions(), 9);
        assert!(trace.paths.iter().all(|p| p.executions() == 3));
    }

    #[test]
    fn repair_limit_zero_means_single_execution_per_path() {
        let store = random_store(3, 30, 4, 6);
        let gw = gateway(StubOutcome::Timeout);
        let config = Config { repair_limit: 0, ..Config::default() };
        let trace = Solver::new(&gw, &StubExecutor, &config).solve(&problem(), &store).unwrap();
        assert_eq!(trace.executions(), trace.queue.len());
    }

    #[test]
    fn empty_store_is_no_memory() {
        let store = crate::store::MemoryStore::new(6, crate::store::test_support::settings(), Default::default());
        let gw = gateway(StubOutcome::Timeout);
        let config = Config::default();
        assert!(matches!(
            Solver::new(&gw, &StubExecutor, &config).solve(&problem(), &store),
            Err(SolveError::NoMemory)
        ));
    }

    #[test]
    fn timeout_payload_reaches_fixer_verbatim() {
        let store = random_store(3, 30, 4, 6);
        let gw = gateway(StubOutcome::Timeout).with_verbose(true);
        let config = Config { planning_candidates: 1, ..Config::default() };
        let trace = Solver::new(&gw, &StubExecutor, &config).solve(&problem(), &store).unwrap();
        let fixer_prompt = trace.paths[0]
            .calls
            .iter()
            .find(|c| c.role == LlmRole::Fixer)
            .and_then(|c| c.prompt.clone())
            .unwrap();
        assert!(fixer_prompt.contains("[timeout]"));
    }

    #[test]
    fn verifier_checks() {
        let gw = gateway(StubOutcome::Timeout);
        let config = Config::default();
        let solver = Solver::new(&gw, &StubExecutor, &config);
        let mut log = CallLog::new();
        let k = Knowledge::default();
        assert_eq!(solver.verify_model("m", &k, &mut log), ("m".into(), VerifyOutcome::Vacuous));
        assert!(log.is_empty());
        let k = Knowledge { checklist: vec!["c".into()], ..Default::default() };
        assert_eq!(solver.verify_model("m", &k, &mut log), ("m".into(), VerifyOutcome::Pass));
        let (code, outcome, banned) = solver.verify_code("import os\n", &Knowledge::default(), &mut log);
        assert_eq!(code, "import os\n");
        assert_eq!(outcome, VerifyOutcome::FailedKept);
        assert_eq!(banned, vec!["os"]);
    }

    #[test]
    fn trace_jsonl_has_plan_paths_and_verdict() {
        let store = random_store(3, 30, 4, 6);
        let gw = gateway(StubOutcome::NonNumeric);
        let config = Config { record_timing: false, ..Config::default() };
        let trace = Solver::new(&gw, &StubExecutor, &config).solve(&problem(), &store).unwrap();
        let lines: Vec<serde_json::Value> =
            trace.to_jsonl().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), trace.paths.len() + 2);
        assert_eq!(lines[0]["kind"], "plan");
        assert_eq!(lines.last().unwrap()["kind"], "verdict");
        assert_eq!(lines.last().unwrap()["executions"], 9);
        assert!(matches!(
            trace.paths[0].steps.last(),
            Some(Step::Execute { result, .. }) if result.status == ExecStatus::NonNumericOutput
        ));
        assert!(trace.queue.iter().all(|p| p.rank_source == RankSource::Selector));
    }
}
