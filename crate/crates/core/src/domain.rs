//! Shared data types and pure functions: problems, attempts, knowledge tiers,
//! embeddings, experience nodes, clusters, the bipartite graph, and the
//! records produced by solving.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the pure domain functions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding must be non-empty with a non-zero finite norm")]
    DegenerateEmbedding,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectory rounds must be contiguous from 1 (found round {found} at position {position})")]
    NonContiguousRounds { position: usize, found: u32 },
    #[error("trajectory has {len} attempts but the round budget is {max_rounds}")]
    TooManyAttempts { len: usize, max_rounds: u32 },
    #[error("incomplete trajectory: {0}")]
    IncompleteTrajectory(&'static str),
}

/// A natural-language optimization problem, optionally labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default)]
    pub source: String,
}

/// Reference answer: the objective value plus any named requirement values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub objective: f64,
    #[serde(default)]
    pub requirements: BTreeMap<String, f64>,
}

/// Numbers extracted from a solver run's answer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extracted {
    pub objective: f64,
    #[serde(default)]
    pub requirements: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Success,
    RuntimeError,
    Timeout,
    NonNumericOutput,
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecStatus::Success => "success",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::NonNumericOutput => "non_numeric_output",
        })
    }
}

/// Outcome of running one solver script. `extracted` is present exactly when
/// the status is `Success`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    pub stdout: String,
    pub stderr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extracted: Option<Extracted>,
    pub wall_time: f64,
}

impl ExecutionResult {
    pub fn success(extracted: Extracted, stdout: String, wall_time: f64) -> Self {
        Self {
            status: ExecStatus::Success,
            stdout,
            stderr: String::new(),
            extracted: Some(extracted),
            wall_time,
        }
    }

    pub fn failure(status: ExecStatus, stdout: String, stderr: String, wall_time: f64) -> Self {
        debug_assert!(status != ExecStatus::Success);
        Self {
            status,
            stdout,
            stderr,
            extracted: None,
            wall_time,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ExecStatus::Success
    }

    /// The error payload handed to the fixer: the status marker followed by stderr.
    pub fn error_payload(&self) -> String {
        let mut out = format!("[{}]", self.status);
        if !self.stderr.trim().is_empty() {
            out.push('\n');
            out.push_str(self.stderr.trim_end());
        }
        out
    }
}

/// One solving attempt during trajectory collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub problem_id: String,
    pub round_index: u32,
    pub modeling_text: String,
    pub coding_text: String,
    pub execution: ExecutionResult,
    pub correct: bool,
}

/// Trajectory stratum of a historical problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SampleType {
    /// Solved on every attempt.
    A,
    /// Mixed outcome: failed at some point and succeeded at another.
    B,
    /// Never solved within the round budget.
    C,
}

impl fmt::Display for SampleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleType::A => "A",
            SampleType::B => "B",
            SampleType::C => "C",
        })
    }
}

/// Three-tier guidance: how to solve, what to verify, what to avoid.
///
/// Used both for per-node instance knowledge and for a cluster's synthesized
/// knowledge.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knowledge {
    pub approach: Vec<String>,
    pub checklist: Vec<String>,
    pub pitfall: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Approach,
    Checklist,
    Pitfall,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Approach, Tier::Checklist, Tier::Pitfall];

    pub fn keyword(self) -> &'static str {
        match self {
            Tier::Approach => "APPROACH",
            Tier::Checklist => "CHECKLIST",
            Tier::Pitfall => "PITFALL",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Approach => "approach",
            Tier::Checklist => "checklist",
            Tier::Pitfall => "pitfall",
        }
    }
}

impl Knowledge {
    pub fn is_empty(&self) -> bool {
        self.approach.is_empty() && self.checklist.is_empty() && self.pitfall.is_empty()
    }

    pub fn tier(&self, tier: Tier) -> &[String] {
        match tier {
            Tier::Approach => &self.approach,
            Tier::Checklist => &self.checklist,
            Tier::Pitfall => &self.pitfall,
        }
    }

    pub fn tier_mut(&mut self, tier: Tier) -> &mut Vec<String> {
        match tier {
            Tier::Approach => &mut self.approach,
            Tier::Checklist => &mut self.checklist,
            Tier::Pitfall => &mut self.pitfall,
        }
    }

    /// Appends items not already present (order-preserving set union).
    pub fn merge_from(&mut self, other: &Knowledge) {
        for tier in Tier::ALL {
            let dst = self.tier_mut(tier);
            for item in other.tier(tier) {
                if !dst.contains(item) {
                    dst.push(item.clone());
                }
            }
        }
    }

    /// True when every item in every tier is non-blank.
    pub fn items_well_formed(&self) -> bool {
        Tier::ALL
            .iter()
            .all(|t| self.tier(*t).iter().all(|s| !s.trim().is_empty()))
    }

    /// Whether the tiers respect which trajectory types may feed them:
    /// successes feed approach/checklist, failures feed pitfalls.
    pub fn respects_sources(&self, sample_type: SampleType) -> bool {
        match sample_type {
            SampleType::A => self.pitfall.is_empty(),
            SampleType::B => true,
            SampleType::C => self.approach.is_empty() && self.checklist.is_empty(),
        }
    }
}

/// Unit-normalized embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `raw` to unit length.
    pub fn new(raw: Vec<f64>) -> Result<Self, DomainError> {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if raw.is_empty() || !norm.is_finite() || norm == 0.0 {
            return Err(DomainError::DegenerateEmbedding);
        }
        Ok(Self(raw.into_iter().map(|x| x / norm).collect()))
    }

    /// Normalized mean of a non-empty set of embeddings of equal dimension.
    pub fn mean_of<'a, I>(items: I) -> Result<Self, DomainError>
    where
        I: IntoIterator<Item = &'a Embedding>,
    {
        let mut sum: Option<Vec<f64>> = None;
        for e in items {
            match sum.as_mut() {
                None => sum = Some(e.0.clone()),
                Some(acc) => {
                    if acc.len() != e.dim() {
                        return Err(DomainError::DimensionMismatch {
                            left: acc.len(),
                            right: e.dim(),
                        });
                    }
                    for (a, b) in acc.iter_mut().zip(&e.0) {
                        *a += b;
                    }
                }
            }
        }
        Embedding::new(sum.ok_or(DomainError::DegenerateEmbedding)?)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine similarity between two embeddings of equal dimension.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64, DomainError> {
    if a.dim() != b.dim() {
        return Err(DomainError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Classifies a complete attempt trajectory.
///
/// `A` needs every attempt correct and at least `min(2, max_rounds)` of
/// them; `B` is any mix of correct and incorrect attempts; `C` needs all
/// `max_rounds` attempts incorrect. Anything else is incomplete.
pub fn classify_trajectory(
    attempts: &[AttemptRecord],
    max_rounds: u32,
) -> Result<SampleType, DomainError> {
    if attempts.is_empty() {
        return Err(DomainError::EmptyTrajectory);
    }
    if attempts.len() > max_rounds as usize {
        return Err(DomainError::TooManyAttempts {
            len: attempts.len(),
            max_rounds,
        });
    }
    for (position, attempt) in attempts.iter().enumerate() {
        if attempt.round_index as usize != position + 1 {
            return Err(DomainError::NonContiguousRounds {
                position,
                found: attempt.round_index,
            });
        }
    }
    let correct = attempts.iter().filter(|a| a.correct).count();
    let confirmations = max_rounds.min(2) as usize;
    if correct == attempts.len() {
        if correct >= confirmations {
            Ok(SampleType::A)
        } else {
            Err(DomainError::IncompleteTrajectory(
                "a single success needs a confirmation attempt",
            ))
        }
    } else if correct > 0 {
        Ok(SampleType::B)
    } else if attempts.len() == max_rounds as usize {
        Ok(SampleType::C)
    } else {
        Err(DomainError::IncompleteTrajectory(
            "all attempts failed before the round budget was exhausted",
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Cluster id, unique within its space. Lower ids were created earlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Modeling,
    Coding,
}

impl Space {
    pub fn prefix(self) -> char {
        match self {
            Space::Modeling => 'm',
            Space::Coding => 'c',
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Modeling => "modeling",
            Space::Coding => "coding",
        })
    }
}

/// One decomposed historical solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceNode {
    pub id: NodeId,
    pub problem_id: String,
    pub sample_type: SampleType,
    pub modeling_text: String,
    pub coding_text: String,
    pub e_m: Embedding,
    pub e_c: Embedding,
    pub phi: Knowledge,
    pub modeling_cluster: ClusterId,
    pub coding_cluster: ClusterId,
}

/// A modeling-space or coding-space group of nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub space: Space,
    pub centroid: Embedding,
    pub members: Vec<NodeId>,
    pub knowledge: Knowledge,
    pub knowledge_version: u32,
    pub pending_phis: Vec<Knowledge>,
}

/// Weighted (modeling cluster, coding cluster) co-occurrence edges.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipartiteGraph {
    edges: BTreeMap<(ClusterId, ClusterId), u64>,
}

impl BipartiteGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn increment(&mut self, modeling: ClusterId, coding: ClusterId) {
        *self.edges.entry((modeling, coding)).or_insert(0) += 1;
    }

    /// Inserts an edge with an explicit weight; zero weights are not stored.
    pub fn set(&mut self, modeling: ClusterId, coding: ClusterId, weight: u64) {
        if weight == 0 {
            self.edges.remove(&(modeling, coding));
        } else {
            self.edges.insert((modeling, coding), weight);
        }
    }

    pub fn weight(&self, modeling: ClusterId, coding: ClusterId) -> u64 {
        self.edges.get(&(modeling, coding)).copied().unwrap_or(0)
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges in key order.
    pub fn edges(&self) -> impl Iterator<Item = (ClusterId, ClusterId, u64)> + '_ {
        self.edges.iter().map(|(&(m, c), &w)| (m, c, w))
    }

    /// Coding neighbors of a modeling cluster, in coding-id order.
    pub fn neighbors(&self, modeling: ClusterId) -> impl Iterator<Item = (ClusterId, u64)> + '_ {
        self.edges
            .range((modeling, ClusterId(0))..=(modeling, ClusterId(u32::MAX)))
            .map(|(&(_, c), &w)| (c, w))
    }
}

/// Where a queued path's position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSource {
    /// Only one candidate; no ranking needed.
    Forced,
    Selector,
    /// Deterministic weight/similarity order used when the selector output was unusable.
    Fallback,
}

/// A (modeling cluster, coding cluster) plan entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPath {
    pub modeling_cluster: ClusterId,
    pub coding_cluster: ClusterId,
    /// Co-occurrence weight of the pair in the graph.
    pub weight: u64,
    /// Similarity between the problem embedding and the modeling centroid.
    pub similarity: f64,
    /// Prior score used for fallback ordering (the edge weight).
    pub prior: f64,
    pub rank_source: RankSource,
}

/// Numeric tolerance used when judging answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub relative: f64,
    pub absolute_floor: f64,
}

impl Tolerance {
    pub const ABSOLUTE_FLOOR: f64 = 1e-6;

    pub fn relative(relative: f64) -> Self {
        Self {
            relative,
            absolute_floor: Self::ABSOLUTE_FLOOR,
        }
    }

    pub fn matches(&self, a: f64, b: f64) -> bool {
        if !a.is_finite() || !b.is_finite() {
            return false;
        }
        let scale = a.abs().max(b.abs());
        (a - b).abs() <= (self.relative * scale).max(self.absolute_floor)
    }
}
