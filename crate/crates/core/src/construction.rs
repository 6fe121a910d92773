//! Building the dual-cluster memory from a labeled corpus.
//!
//! Each problem is attempted without memory until its trajectory can be
//! classified (A, B or C). The representative solution is split into a
//! modeling part and a coding part, tiered knowledge is extracted according
//! to the trajectory type, and the node is assigned to a cluster in each
//! space by a verifier call over the top-k closest centroids. Per-node
//! knowledge accumulates in each cluster until `update_threshold` pieces are
//! pending, at which point it is synthesized into the cluster knowledge.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::domain::{
    classify_trajectory, AttemptRecord, ClusterId, Embedding, ExecStatus, ExecutionResult,
    ExperienceNode, Knowledge, NodeId, Problem, SampleType, Space, Tier,
};
use crate::planner::top_k;
use crate::provider::format::{
    fence, labeled_sections, parse_knowledge, parse_match, render_knowledge, FormatError,
    MatchVerdict,
};
use crate::provider::{CallLog, Gateway, LlmRole, ProviderError, Slots};
use crate::sandbox::{judge, Executor, SandboxError};
use crate::store::{BuildSettings, MemoryStore, Provenance};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("execution environment: {0}")]
    Environment(#[from] SandboxError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Tiers each trajectory type may contribute to.
pub fn allowed_tiers(sample_type: SampleType) -> &'static [Tier] {
    match sample_type {
        SampleType::A => &[Tier::Approach, Tier::Checklist],
        SampleType::B => &Tier::ALL,
        SampleType::C => &[Tier::Pitfall],
    }
}

/// Splits a combined solution into (modeling text, coding text).
///
/// Labeled fences are used when present; otherwise the extractor is asked to
/// split the solution.
pub fn decompose(gateway: &Gateway, solution: &str, log: &mut CallLog) -> Result<(String, String), ProviderError> {
    if let (Some(m), Some(c)) = labeled_sections(solution) {
        return Ok((m, c));
    }
    let mut s = Slots::new();
    s.insert("task".into(), "split".into());
    s.insert("sample_type".into(), "-".into());
    s.insert("solution".into(), solution.into());
    gateway.chat_parsed(LlmRole::Extractor, &s, log, |raw| match labeled_sections(raw) {
        (Some(m), Some(c)) => Ok((m, c)),
        _ => Err(FormatError("expected a ```model fence and a ```python fence".into())),
    })
}

/// One memory-free attempt.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub modeling_text: String,
    pub coding_text: String,
    pub execution: ExecutionResult,
}

/// Generates a full solution without guidance, splits it and executes the code.
///
/// Provider failures and unsplittable output become runtime-error results;
/// only a broken execution environment is an error.
pub fn baseline_attempt(
    gateway: &Gateway,
    executor: &dyn Executor,
    problem: &str,
    round: u32,
    log: &mut CallLog,
) -> Result<BaselineRun, SandboxError> {
    let mut s = Slots::new();
    s.insert("phase".into(), "full".into());
    s.insert("round".into(), round.to_string());
    s.insert("problem".into(), problem.into());
    s.insert("guidance".into(), "(none)".into());
    let failed = |msg: String| BaselineRun {
        modeling_text: String::new(),
        coding_text: String::new(),
        execution: ExecutionResult::failure(ExecStatus::RuntimeError, String::new(), msg, 0.0),
    };
    let raw = match gateway.chat(LlmRole::Generator, &s, log) {
        Ok(raw) => raw,
        Err(e) => return Ok(failed(format!("generation failed: {e}"))),
    };
    let (modeling_text, coding_text) = match decompose(gateway, &raw, log) {
        Ok(parts) => parts,
        Err(e) => return Ok(failed(format!("could not separate model and code: {e}"))),
    };
    let execution = executor.execute(&coding_text)?;
    Ok(BaselineRun { modeling_text, coding_text, execution })
}

/// A classified trajectory for one corpus problem.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub problem_id: String,
    pub attempts: Vec<AttemptRecord>,
    pub sample_type: SampleType,
}

fn failure_summary(a: &AttemptRecord) -> String {
    let detail = if a.execution.is_success() {
        match &a.execution.extracted {
            Some(x) => format!("objective {} did not match the reference", x.objective),
            None => "no answer".into(),
        }
    } else {
        let first = a.execution.stderr.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
        format!("{}: {first}", a.execution.status)
    };
    format!("[round {}]: {detail}", a.round_index)
}

impl Trajectory {
    /// Attempt whose texts represent the trajectory: the last correct one
    /// for B, the last one otherwise.
    pub fn representative(&self) -> &AttemptRecord {
        let last = self.attempts.last().expect("classified trajectories are non-empty");
        match self.sample_type {
            SampleType::B => self.attempts.iter().rev().find(|a| a.correct).unwrap_or(last),
            _ => last,
        }
    }

    pub fn failures(&self) -> Vec<String> {
        self.attempts.iter().filter(|a| !a.correct).map(failure_summary).collect()
    }

    pub fn draft(&self) -> NodeDraft {
        let rep = self.representative();
        NodeDraft {
            problem_id: self.problem_id.clone(),
            sample_type: self.sample_type,
            modeling_text: rep.modeling_text.clone(),
            coding_text: rep.coding_text.clone(),
            failures: self.failures(),
        }
    }
}

/// Attempts `problem` until its trajectory type is determined: a success is
/// confirmed by a second attempt, and failures are retried up to the round
/// budget.
pub fn collect_trajectory(
    problem: &Problem,
    gateway: &Gateway,
    executor: &dyn Executor,
    config: &Config,
    log: &mut CallLog,
) -> Result<Option<Trajectory>, SandboxError> {
    let Some(truth) = &problem.ground_truth else {
        return Ok(None);
    };
    let tolerance = config.tolerance();
    let max_rounds = config.max_classification_rounds;
    let confirmations = max_rounds.min(2) as usize;
    let mut attempts: Vec<AttemptRecord> = Vec::new();
    for round in 1..=max_rounds {
        let run = baseline_attempt(gateway, executor, &problem.text, round, log)?;
        let correct = run.execution.extracted.as_ref().is_some_and(|x| judge(x, truth, tolerance))
            && run.execution.is_success();
        attempts.push(AttemptRecord {
            problem_id: problem.id.clone(),
            round_index: round,
            modeling_text: run.modeling_text,
            coding_text: run.coding_text,
            execution: run.execution,
            correct,
        });
        let solved = attempts.iter().filter(|a| a.correct).count();
        if solved == attempts.len() && solved >= confirmations {
            break;
        }
        if solved > 0 && solved < attempts.len() {
            break;
        }
    }
    let sample_type = classify_trajectory(&attempts, max_rounds).expect("collection stops on a classifiable trajectory");
    Ok(Some(Trajectory {
        problem_id: problem.id.clone(),
        attempts,
        sample_type,
    }))
}

/// Input to node construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDraft {
    pub problem_id: String,
    pub sample_type: SampleType,
    pub modeling_text: String,
    pub coding_text: String,
    /// One line per failed attempt.
    pub failures: Vec<String>,
}

/// Extracts per-node knowledge, one extractor call per allowed tier.
///
/// Items the extractor returns for other tiers are discarded. An unusable
/// reply leaves its tier empty.
pub fn extract_phi(gateway: &Gateway, draft: &NodeDraft, log: &mut CallLog) -> (Knowledge, Vec<String>) {
    let solution = format!(
        "{}\n\n{}",
        fence("model", &draft.modeling_text),
        fence("python", &draft.coding_text)
    );
    let failures = if draft.failures.is_empty() {
        "(none)".to_string()
    } else {
        draft.failures.join("\n")
    };
    let mut phi = Knowledge::default();
    let mut warnings = Vec::new();
    for &tier in allowed_tiers(draft.sample_type) {
        let mut s = Slots::new();
        s.insert("task".into(), tier.name().into());
        s.insert("sample_type".into(), draft.sample_type.to_string());
        s.insert("solution".into(), solution.clone());
        s.insert("failures".into(), failures.clone());
        match gateway.chat_parsed(LlmRole::Extractor, &s, log, parse_knowledge) {
            Ok(k) => *phi.tier_mut(tier) = k.tier(tier).to_vec(),
            Err(e) => warnings.push(format!("{} extraction for {}: {e}", tier.name(), draft.problem_id)),
        }
    }
    (phi, warnings)
}

/// A construction log record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum BuildEvent {
    Node {
        problem_id: String,
        node: NodeId,
        sample_type: SampleType,
        modeling_cluster: ClusterId,
        coding_cluster: ClusterId,
        new_modeling_cluster: bool,
        new_coding_cluster: bool,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        warnings: Vec<String>,
    },
    Synthesis {
        space: Space,
        cluster: ClusterId,
        ok: bool,
        version: u32,
        pending: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Dropped {
        problem_id: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub problems: usize,
    pub nodes: usize,
    pub type_counts: BTreeMap<SampleType, usize>,
    pub modeling_clusters: usize,
    pub coding_clusters: usize,
    pub syntheses: usize,
    pub synthesis_failures: usize,
    pub dropped: usize,
    pub events: Vec<BuildEvent>,
}

impl BuildReport {
    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

enum Assignment {
    Existing(ClusterId),
    New,
}

/// Single-writer incremental memory builder.
pub struct MemoryBuilder<'a> {
    gateway: &'a Gateway,
    config: &'a Config,
    store: MemoryStore,
    report: BuildReport,
    calls: CallLog,
}

impl<'a> MemoryBuilder<'a> {
    pub fn new(gateway: &'a Gateway, config: &'a Config) -> Self {
        let provenance = Provenance {
            chat_model: Some(gateway.model().to_string()),
            embed_model: Some(config.embed_model.clone()),
            seed: Some(config.seed),
            subsample: None,
        };
        Self {
            gateway,
            config,
            store: MemoryStore::new(gateway.dim(), BuildSettings::from(config), provenance),
            report: BuildReport::default(),
            calls: CallLog::new(),
        }
    }

    pub fn store(&self) -> &MemoryStore {
        &self.store
    }

    pub fn report(&self) -> &BuildReport {
        &self.report
    }

    /// Chat calls made by the builder so far.
    pub fn calls(&self) -> &CallLog {
        &self.calls
    }

    pub fn finish(mut self) -> (MemoryStore, BuildReport) {
        self.report.nodes = self.store.node_count();
        self.report.modeling_clusters = self.store.cluster_count(Space::Modeling);
        self.report.coding_clusters = self.store.cluster_count(Space::Coding);
        (self.store, self.report)
    }

    /// Numbered descriptions of candidate clusters for the assignment verifier.
    pub fn cluster_summary(&self, space: Space, candidates: &[ClusterId]) -> String {
        let per_entry = self.config.summary_char_budget / candidates.len().max(1);
        candidates
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let mut lines = vec![format!("[#{}] {} cluster {}{}", i + 1, space, space.prefix(), id.0)];
                if let Some(cluster) = self.store.cluster(space, id) {
                    for item in cluster.knowledge.approach.iter().take(2) {
                        lines.push(format!("- {item}"));
                    }
                    let mut heads: Vec<&str> = Vec::new();
                    for node in cluster.members.iter().filter_map(|n| self.store.node(*n)) {
                        let text = match space {
                            Space::Modeling => &node.modeling_text,
                            Space::Coding => &node.coding_text,
                        };
                        let head = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
                        if !head.is_empty() && !heads.contains(&head) {
                            heads.push(head);
                        }
                        if heads.len() == 3 {
                            break;
                        }
                    }
                    lines.extend(heads.iter().map(|h| format!("- {h}")));
                }
                let entry = lines.join("\n");
                entry.chars().take(per_entry).collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn assign(&mut self, space: Space, embedding: &Embedding, text: &str) -> Result<Assignment, ProviderError> {
        if self.store.cluster_count(space) == 0 {
            return Ok(Assignment::New);
        }
        let candidates: Vec<ClusterId> = top_k(
            embedding,
            self.store.clusters(space).map(|c| (c.id, &c.centroid)),
            self.config.retrieval_top_k,
        )?
        .into_iter()
        .map(|s| s.id)
        .collect();
        let mut s = Slots::new();
        s.insert("task".into(), "assign".into());
        s.insert("candidate".into(), text.into());
        s.insert("cluster_summary".into(), self.cluster_summary(space, &candidates));
        let n = candidates.len();
        match self.gateway.chat_parsed(LlmRole::Verifier, &s, &mut self.calls, |raw| parse_match(raw, n)) {
            Ok(MatchVerdict::Match(i)) => Ok(Assignment::Existing(candidates[i - 1])),
            Ok(MatchVerdict::NoMatch) => Ok(Assignment::New),
            Err(ProviderError::Malformed { .. }) => Ok(Assignment::New),
            Err(e) => Err(e),
        }
    }

    fn drop_draft(&mut self, problem_id: &str, reason: String) {
        tracing::warn!(problem = problem_id, %reason, "dropping node");
        self.report.dropped += 1;
        self.report.events.push(BuildEvent::Dropped {
            problem_id: problem_id.to_string(),
            reason,
        });
    }

    /// Adds one node: embeds both texts, extracts its knowledge, assigns it
    /// in both spaces and triggers synthesis where due. Returns `None` when
    /// the draft had to be dropped.
    pub fn ingest(&mut self, draft: &NodeDraft) -> Option<NodeId> {
        if draft.modeling_text.trim().is_empty() || draft.coding_text.trim().is_empty() {
            self.drop_draft(&draft.problem_id, "solution could not be decomposed".into());
            return None;
        }
        let embedded = self
            .gateway
            .embed(&draft.modeling_text)
            .and_then(|m| self.gateway.embed(&draft.coding_text).map(|c| (m, c)));
        let (e_m, e_c) = match embedded {
            Ok(pair) => pair,
            Err(e) => {
                self.drop_draft(&draft.problem_id, format!("embedding failed: {e}"));
                return None;
            }
        };
        let (phi, warnings) = extract_phi(self.gateway, draft, &mut self.calls);
        let decided = self
            .assign(Space::Modeling, &e_m, &draft.modeling_text)
            .and_then(|m| self.assign(Space::Coding, &e_c, &draft.coding_text).map(|c| (m, c)));
        let (am, ac) = match decided {
            Ok(pair) => pair,
            Err(e) => {
                self.drop_draft(&draft.problem_id, format!("cluster assignment failed: {e}"));
                return None;
            }
        };
        let mut resolve = |space: Space, a: Assignment, e: &Embedding| match a {
            Assignment::Existing(id) => (id, false),
            Assignment::New => (self.store.create_cluster(space, e.clone()), true),
        };
        let (m, new_m) = resolve(Space::Modeling, am, &e_m);
        let (c, new_c) = resolve(Space::Coding, ac, &e_c);
        let id = self.store.next_node_id();
        self.store.insert_node(ExperienceNode {
            id,
            problem_id: draft.problem_id.clone(),
            sample_type: draft.sample_type,
            modeling_text: draft.modeling_text.clone(),
            coding_text: draft.coding_text.clone(),
            e_m,
            e_c,
            phi: phi.clone(),
            modeling_cluster: m,
            coding_cluster: c,
        });
        *self.report.type_counts.entry(draft.sample_type).or_default() += 1;
        self.report.events.push(BuildEvent::Node {
            problem_id: draft.problem_id.clone(),
            node: id,
            sample_type: draft.sample_type,
            modeling_cluster: m,
            coding_cluster: c,
            new_modeling_cluster: new_m,
            new_coding_cluster: new_c,
            warnings,
        });
        for (space, cid) in [(Space::Modeling, m), (Space::Coding, c)] {
            let mean = self.store.member_mean(space, cid).expect("cluster has members");
            let cluster = self.store.cluster_mut(space, cid).expect("cluster exists");
            cluster.centroid = mean;
            cluster.pending_phis.push(phi.clone());
            if cluster.pending_phis.len() >= self.config.update_threshold {
                self.synthesize(space, cid);
            }
        }
        Some(id)
    }

    /// Merges a cluster's pending knowledge into its synthesized knowledge.
    /// On failure the pending batch is kept for the next attempt.
    pub fn synthesize(&mut self, space: Space, id: ClusterId) -> bool {
        let Some(cluster) = self.store.cluster(space, id) else {
            return false;
        };
        let batch = cluster
            .pending_phis
            .iter()
            .map(render_knowledge)
            .collect::<Vec<_>>()
            .join("\n\n");
        let mut s = Slots::new();
        s.insert("current".into(), render_knowledge(&cluster.knowledge));
        s.insert("batch".into(), batch);
        let result = self.gateway.chat_parsed(LlmRole::Synthesizer, &s, &mut self.calls, parse_knowledge);
        let cluster = self.store.cluster_mut(space, id).expect("cluster exists");
        let error = match result {
            Ok(k) => {
                cluster.knowledge = k;
                cluster.knowledge_version += 1;
                cluster.pending_phis.clear();
                self.report.syntheses += 1;
                None
            }
            Err(e) => {
                tracing::warn!(%space, cluster = id.0, error = %e, "synthesis failed; keeping pending knowledge");
                self.report.synthesis_failures += 1;
                Some(e.to_string())
            }
        };
        self.report.events.push(BuildEvent::Synthesis {
            space,
            cluster: id,
            ok: error.is_none(),
            version: cluster.knowledge_version,
            pending: cluster.pending_phis.len(),
            error,
        });
        cluster.pending_phis.is_empty()
    }
}

/// Collects trajectories for the corpus (in parallel, `workers` threads) and
/// ingests them in corpus order.
pub fn build_memory(
    corpus: &[Problem],
    gateway: &Gateway,
    executor: &dyn Executor,
    config: &Config,
) -> Result<(MemoryStore, BuildReport), BuildError> {
    if corpus.is_empty() {
        return Err(BuildError::EmptyCorpus);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| BuildError::Pool(e.to_string()))?;
    let trajectories: Vec<Result<Option<Trajectory>, SandboxError>> = pool.install(|| {
        corpus
            .par_iter()
            .map(|p| collect_trajectory(p, gateway, executor, config, &mut CallLog::new()))
            .collect()
    });
    let mut builder = MemoryBuilder::new(gateway, config);
    builder.report.problems = corpus.len();
    for (problem, trajectory) in corpus.iter().zip(trajectories) {
        match trajectory? {
            Some(t) => {
                builder.ingest(&t.draft());
            }
            None => builder.drop_draft(&problem.id, "no ground truth".into()),
        }
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GroundTruth;
    use crate::provider::{ChatBackend, ChatRequest, MockBackend};
    use crate::sandbox::StubExecutor;
    use std::sync::Arc;

    fn draft(i: usize, sample_type: SampleType) -> NodeDraft {
        NodeDraft {
            problem_id: format!("p{i}"),
            sample_type,
            modeling_text: "Formulation: knapsack\nmax value".into(),
            coding_text: "# solver: pulp\nimport pulp".into(),
            failures: if sample_type == SampleType::A { vec![] } else { vec!["[round 1]: timeout: slow".into()] },
        }
    }

    fn gateway() -> Gateway {
        Gateway::mock(MockBackend::new("mock-a", 7, 16))
    }

    #[test]
    fn identical_nodes_share_one_edge() {
        let gw = gateway();
        let config = Config::default();
        let mut b = MemoryBuilder::new(&gw, &config);
        for i in 0..10 {
            b.ingest(&draft(i, SampleType::A)).unwrap();
        }
        let (store, report) = b.finish();
        assert_eq!(store.cluster_count(Space::Modeling), 1);
        assert_eq!(store.cluster_count(Space::Coding), 1);
        assert_eq!(store.graph().weight(ClusterId(0), ClusterId(0)), 10);
        assert_eq!(report.syntheses, 4);
        store.validate().unwrap();
    }

    #[test]
    fn fifth_phi_triggers_synthesis() {
        let gw = gateway();
        let config = Config::default();
        let mut b = MemoryBuilder::new(&gw, &config);
        for i in 0..4 {
            b.ingest(&draft(i, SampleType::B));
        }
        let c = b.store().cluster(Space::Modeling, ClusterId(0)).unwrap();
        assert_eq!((c.knowledge_version, c.pending_phis.len()), (0, 4));
        b.ingest(&draft(4, SampleType::B));
        let c = b.store().cluster(Space::Modeling, ClusterId(0)).unwrap();
        assert_eq!((c.knowledge_version, c.pending_phis.len()), (1, 0));
        assert!(!c.knowledge.approach.is_empty());
        assert!(!c.knowledge.pitfall.is_empty());
    }

    struct BrokenSynth(MockBackend);

    impl ChatBackend for BrokenSynth {
        fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
            match req.role {
                LlmRole::Synthesizer => Ok("no idea".into()),
                _ => self.0.complete(req),
            }
        }
    }

    #[test]
    fn failed_synthesis_keeps_pending() {
        let gw = gateway().with_chat_backend(Arc::new(BrokenSynth(MockBackend::new("mock-a", 7, 16))));
        let config = Config::default();
        let mut b = MemoryBuilder::new(&gw, &config);
        for i in 0..6 {
            b.ingest(&draft(i, SampleType::A));
        }
        let c = b.store().cluster(Space::Modeling, ClusterId(0)).unwrap();
        assert_eq!((c.knowledge_version, c.pending_phis.len()), (0, 6));
        assert!(b.report().synthesis_failures >= 2);
    }

    #[test]
    fn tiers_follow_sample_type() {
        let gw = gateway();
        let mut log = CallLog::new();
        for t in [SampleType::A, SampleType::B, SampleType::C] {
            let (phi, warnings) = extract_phi(&gw, &draft(0, t), &mut log);
            assert!(warnings.is_empty());
            assert!(phi.respects_sources(t), "{t}: {phi:?}");
        }
        let (a, _) = extract_phi(&gw, &draft(0, SampleType::A), &mut log);
        assert!(!a.approach.is_empty() && a.pitfall.is_empty());
        let (c, _) = extract_phi(&gw, &draft(0, SampleType::C), &mut log);
        assert!(c.approach.is_empty() && c.checklist.is_empty() && !c.pitfall.is_empty());
    }

    #[test]
    fn undecomposable_draft_is_dropped() {
        let gw = gateway();
        let config = Config::default();
        let mut b = MemoryBuilder::new(&gw, &config);
        let mut d = draft(0, SampleType::C);
        d.coding_text.clear();
        assert!(b.ingest(&d).is_none());
        assert_eq!(b.report().dropped, 1);
        assert!(b.store().is_empty());
    }

    #[test]
    fn decompose_prefers_labels_then_extractor() {
        let gw = gateway();
        let mut log = CallLog::new();
        let labeled = "```model\nmax x\n```\n```python\nimport pulp\n```";
        assert_eq!(decompose(&gw, labeled, &mut log).unwrap(), ("max x".into(), "import pulp".into()));
        assert!(log.is_empty());
        let (m, c) = decompose(&gw, "max x\ns.t. x <= 1\nimport pulp\nprint(1)", &mut log).unwrap();
        assert_eq!(m, "max x\ns.t. x <= 1");
        assert_eq!(c, "import pulp\nprint(1)");
        assert!(decompose(&gw, "just words", &mut log).is_err());
    }

    fn problem(i: usize) -> Problem {
        Problem {
            id: format!("q{i:02}"),
            text: format!("Knapsack variant {}\nitems weigh {i}", i % 3),
            ground_truth: Some(GroundTruth { objective: 10.0 + i as f64, requirements: Default::default() }),
            source: "test".into(),
        }
    }

    #[test]
    fn collection_stops_when_type_is_known() {
        let corpus: Vec<Problem> = (0..12).map(problem).collect();
        let gw = Gateway::mock(MockBackend::new("mock-a", 3, 16).with_answer_key(&corpus));
        let config = Config::default();
        for p in &corpus {
            let t = collect_trajectory(p, &gw, &StubExecutor, &config, &mut CallLog::new()).unwrap().unwrap();
            match t.sample_type {
                SampleType::A => assert_eq!(t.attempts.len(), 2),
                SampleType::C => assert_eq!(t.attempts.len(), 3),
                SampleType::B => {
                    assert!(t.attempts.iter().any(|a| a.correct));
                    assert!(t.representative().correct);
                }
            }
        }
    }

    #[test]
    fn build_is_deterministic_across_workers() {
        let corpus: Vec<Problem> = (0..12).map(problem).collect();
        let gw = Gateway::mock(MockBackend::new("mock-a", 3, 16).with_answer_key(&corpus));
        let config = Config::default();
        let (s1, r1) = build_memory(&corpus, &gw, &StubExecutor, &config).unwrap();
        let parallel = Config { workers: 4, ..Config::default() };
        let (s2, r2) = build_memory(&corpus, &gw, &StubExecutor, &parallel).unwrap();
        assert_eq!(s1.nodes().collect::<Vec<_>>(), s2.nodes().collect::<Vec<_>>());
        assert_eq!(r1.events, r2.events);
        assert_eq!(s1.graph().total_weight(), s1.node_count() as u64);
        s1.validate().unwrap();
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let gw = gateway();
        assert!(matches!(
            build_memory(&[], &gw, &StubExecutor, &Config::default()),
            Err(BuildError::EmptyCorpus)
        ));
    }
}
