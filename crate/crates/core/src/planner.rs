//! Dual retrieval, candidate merging, graph path expansion and path ranking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::domain::{
    similarity, BipartiteGraph, ClusterId, DomainError, Embedding, NodeId, RankSource, SolutionPath, Space,
};
use crate::provider::format::{parse_ranking, render_tier};
use crate::provider::{CallLog, Gateway, LlmRole, ProviderError, Slots};
use crate::store::MemoryStore;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("memory store is empty")]
    EmptyStore,
    #[error("no solution paths: the memory graph has no edges")]
    NoPaths,
}

/// An item with its similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored<T> {
    pub id: T,
    pub similarity: f64,
}

/// The `k` most similar items, ties broken by lower id.
pub fn top_k<'a, T, I>(query: &Embedding, items: I, k: usize) -> Result<Vec<Scored<T>>, DomainError>
where
    T: Copy + Ord,
    I: IntoIterator<Item = (T, &'a Embedding)>,
{
    let mut scored = items
        .into_iter()
        .map(|(id, e)| similarity(query, e).map(|s| Scored { id, similarity: s }))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.id.cmp(&b.id)));
    scored.truncate(k);
    Ok(scored)
}

/// Nodes whose modeling embedding is closest to the problem embedding.
pub fn instance_retrieve(
    query: &Embedding,
    store: &MemoryStore,
    k: usize,
) -> Result<Vec<Scored<NodeId>>, DomainError> {
    top_k(query, store.nodes().map(|n| (n.id, &n.e_m)), k)
}

/// Modeling clusters whose centroid is closest to the problem embedding.
pub fn cluster_retrieve(
    query: &Embedding,
    store: &MemoryStore,
    k: usize,
) -> Result<Vec<Scored<ClusterId>>, DomainError> {
    top_k(
        query,
        store.clusters(Space::Modeling).map(|c| (c.id, &c.centroid)),
        k,
    )
}

/// Union of the retrieved nodes' modeling clusters and the retrieved
/// clusters: instance-derived first, then centroid-derived, no duplicates.
pub fn merge_candidates(
    instances: &[Scored<NodeId>],
    clusters: &[Scored<ClusterId>],
    store: &MemoryStore,
) -> Vec<ClusterId> {
    let mut out = Vec::new();
    let from_instances = instances
        .iter()
        .filter_map(|s| store.node(s.id))
        .map(|n| n.modeling_cluster);
    for id in from_instances.chain(clusters.iter().map(|s| s.id)) {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

/// The top-`k` coding neighbors of each candidate modeling cluster by edge
/// weight (ties: lower coding id). Returns `(modeling, coding, weight)`
/// triples in candidate order, deduplicated.
pub fn expand_paths(
    candidates: &[ClusterId],
    graph: &BipartiteGraph,
    k: usize,
) -> Vec<(ClusterId, ClusterId, u64)> {
    let mut pool = Vec::new();
    let mut seen = BTreeSet::new();
    for &m in candidates {
        let mut neighbors: Vec<(ClusterId, u64)> = graph.neighbors(m).collect();
        if neighbors.is_empty() {
            tracing::debug!(cluster = %m, "modeling cluster has no edges; contributes no paths");
        }
        neighbors.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (c, w) in neighbors.into_iter().take(k) {
            if seen.insert((m, c)) {
                pool.push((m, c, w));
            }
        }
    }
    pool
}

/// Global top-`m` edges by weight (ties: lower modeling id, then coding id).
pub fn fallback_paths(graph: &BipartiteGraph, m: usize) -> Vec<(ClusterId, ClusterId, u64)> {
    let mut edges: Vec<_> = graph.edges().collect();
    edges.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    edges.truncate(m);
    edges
}

/// Deterministic order: weight desc, then modeling-centroid similarity desc,
/// then ids.
pub fn fallback_order(pool: &[SolutionPath]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (&pool[a], &pool[b]);
        pb.weight
            .cmp(&pa.weight)
            .then(pb.similarity.total_cmp(&pa.similarity))
            .then(pa.modeling_cluster.cmp(&pb.modeling_cluster))
            .then(pa.coding_cluster.cmp(&pb.coding_cluster))
    });
    idx
}

fn truncate_chars(s: &str, budget: usize) -> String {
    match s.char_indices().nth(budget) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

/// Selector-facing description of each path: both clusters' approach items.
pub fn describe_paths(pool: &[SolutionPath], store: &MemoryStore, budget: usize) -> String {
    let mut out = String::new();
    for (i, p) in pool.iter().enumerate() {
        let approach = |space, id| {
            store
                .cluster(space, id)
                .map(|c| render_tier(&c.knowledge.approach))
                .unwrap_or_default()
        };
        let entry = format!(
            "[#{i}] modeling m{} -> coding c{} (co-occurrence {})\nmodeling approach:\n{}\ncoding approach:\n{}",
            p.modeling_cluster,
            p.coding_cluster,
            p.weight,
            approach(Space::Modeling, p.modeling_cluster),
            approach(Space::Coding, p.coding_cluster),
        );
        out.push_str(&truncate_chars(&entry, budget));
        out.push('\n');
    }
    out
}

/// Outcome of ranking, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub queue: Vec<SolutionPath>,
    pub source: RankSource,
}

/// Orders the pool with the selector and keeps the first `m`.
///
/// A single-path pool skips the selector. A malformed or failed selector
/// reply falls back to [`fallback_order`]. A partial ranking is completed
/// with the remaining paths in fallback order.
pub fn rank_paths(
    pool: &[SolutionPath],
    problem: &str,
    m: usize,
    store: &MemoryStore,
    gateway: &Gateway,
    budget: usize,
    log: &mut CallLog,
) -> Ranking {
    let tag = |mut p: SolutionPath, source| {
        p.rank_source = source;
        p
    };
    if pool.len() <= 1 {
        return Ranking {
            queue: pool.iter().take(m).cloned().map(|p| tag(p, RankSource::Forced)).collect(),
            source: RankSource::Forced,
        };
    }
    let mut slots = Slots::new();
    slots.insert("problem".into(), problem.to_string());
    slots.insert("paths".into(), describe_paths(pool, store, budget));
    let ranked = gateway.chat_parsed(LlmRole::Selector, &slots, log, |raw| parse_ranking(raw, pool.len()));
    let (order, source) = match ranked {
        Ok(mut order) => {
            for i in fallback_order(pool) {
                if !order.contains(&i) {
                    order.push(i);
                }
            }
            (order, RankSource::Selector)
        }
        Err(e) => {
            log_selector_failure(&e);
            (fallback_order(pool), RankSource::Fallback)
        }
    };
    Ranking {
        queue: order
            .into_iter()
            .take(m)
            .map(|i| tag(pool[i].clone(), source))
            .collect(),
        source,
    }
}

fn log_selector_failure(e: &ProviderError) {
    tracing::warn!(error = %e, "selector unusable; using weight/similarity fallback order");
}

/// Everything the planner decided for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub instances: Vec<Scored<NodeId>>,
    pub clusters: Vec<Scored<ClusterId>>,
    pub candidates: Vec<ClusterId>,
    pub pool: Vec<SolutionPath>,
    /// Pool came from global top edges because no candidate had edges.
    pub used_global_fallback: bool,
    pub queue: Vec<SolutionPath>,
}

/// Runs retrieval, merging, expansion and ranking.
pub fn plan(
    query: &Embedding,
    problem: &str,
    store: &MemoryStore,
    gateway: &Gateway,
    config: &Config,
    log: &mut CallLog,
) -> Result<Plan, PlanError> {
    let (k, m) = (config.retrieval_top_k, config.planning_candidates);
    if store.is_empty() {
        return Err(PlanError::EmptyStore);
    }
    let instances = instance_retrieve(query, store, k)?;
    let clusters = cluster_retrieve(query, store, k)?;
    let candidates = merge_candidates(&instances, &clusters, store);
    let mut triples = expand_paths(&candidates, store.graph(), k);
    let used_global_fallback = triples.is_empty();
    if used_global_fallback {
        triples = fallback_paths(store.graph(), m);
    }
    if triples.is_empty() {
        return Err(PlanError::NoPaths);
    }
    let pool = triples
        .into_iter()
        .map(|(mc, cc, w)| {
            let sim = store
                .cluster(Space::Modeling, mc)
                .map(|c| similarity(query, &c.centroid))
                .transpose()?
                .unwrap_or(0.0);
            Ok(SolutionPath {
                modeling_cluster: mc,
                coding_cluster: cc,
                weight: w,
                similarity: sim,
                prior: w as f64,
                rank_source: RankSource::Fallback,
            })
        })
        .collect::<Result<Vec<_>, DomainError>>()?;
    let ranking = rank_paths(&pool, problem, m, store, gateway, config.summary_char_budget, log);
    Ok(Plan {
        instances,
        clusters,
        candidates,
        pool,
        used_global_fallback,
        queue: ranking.queue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::MockBackend;
    use crate::config::Config;
    use crate::store::test_support::random_store;

    fn path(m: u32, c: u32, w: u64, sim: f64) -> SolutionPath {
        SolutionPath {
            modeling_cluster: ClusterId(m),
            coding_cluster: ClusterId(c),
            weight: w,
            similarity: sim,
            prior: w as f64,
            rank_source: RankSource::Fallback,
        }
    }

    #[test]
    fn expand_weight_sorted_example() {
        let mut g = BipartiteGraph::new();
        g.set(ClusterId(1), ClusterId(1), 5);
        g.set(ClusterId(1), ClusterId(2), 2);
        g.set(ClusterId(1), ClusterId(3), 1);
        let p = expand_paths(&[ClusterId(1)], &g, 2);
        assert_eq!(p, vec![(ClusterId(1), ClusterId(1), 5), (ClusterId(1), ClusterId(2), 2)]);
        assert!(expand_paths(&[ClusterId(9)], &g, 2).is_empty());
    }

    #[test]
    fn expand_cardinality_bound() {
        let mut g = BipartiteGraph::new();
        for m in 0..3 {
            for c in 0..5 {
                g.set(ClusterId(m), ClusterId(c), 1 + (m * c) as u64);
            }
        }
        let p = expand_paths(&[ClusterId(0), ClusterId(1), ClusterId(2)], &g, 3);
        assert_eq!(p.len(), 9);
    }

    #[test]
    fn merge_examples() {
        let store = random_store(11, 20, 6, 6);
        let s: Vec<Scored<ClusterId>> = store
            .clusters(Space::Modeling)
            .map(|c| Scored { id: c.id, similarity: 0.0 })
            .collect();
        // every node's cluster is already in S
        let h: Vec<Scored<NodeId>> = store.nodes().take(3).map(|n| Scored { id: n.id, similarity: 0.0 }).collect();
        let r = merge_candidates(&h, &s, &store);
        let mut sorted_r = r.clone();
        sorted_r.sort();
        assert_eq!(sorted_r, s.iter().map(|x| x.id).collect::<Vec<_>>());
        // duplicates collapse
        let r = merge_candidates(&h, &s[..1], &store);
        let unique: BTreeSet<_> = r.iter().collect();
        assert_eq!(unique.len(), r.len());
    }

    #[test]
    fn fallback_order_is_weight_then_similarity() {
        let pool = vec![path(0, 0, 1, 0.9), path(1, 0, 3, 0.1), path(2, 0, 3, 0.5)];
        assert_eq!(fallback_order(&pool), vec![2, 1, 0]);
    }

    #[test]
    fn singleton_pool_is_forced() {
        let store = random_store(1, 4, 2, 6);
        let gw = Gateway::mock(MockBackend::new("m", 1, 6));
        let mut log = CallLog::new();
        let r = rank_paths(&[path(0, 0, 1, 0.0)], "p", 3, &store, &gw, 400, &mut log);
        assert_eq!(r.source, RankSource::Forced);
        assert_eq!(r.queue.len(), 1);
        assert!(log.is_empty());
    }

    #[test]
    fn mock_selector_identity_truncates_to_m() {
        let store = random_store(1, 4, 2, 6);
        let gw = Gateway::mock(MockBackend::new("m", 1, 6));
        let mut log = CallLog::new();
        let pool: Vec<_> = (0..9).map(|i| path(i, 0, 1, 0.0)).collect();
        let r = rank_paths(&pool, "p", 3, &store, &gw, 400, &mut log);
        assert_eq!(r.source, RankSource::Selector);
        assert_eq!(r.queue.iter().map(|p| p.modeling_cluster.0).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn plan_on_random_store() {
        let store = random_store(5, 30, 5, 6);
        let gw = Gateway::mock(MockBackend::new("m", 1, 6));
        let q = store.nodes().next().unwrap().e_m.clone();
        let mut log = CallLog::new();
        let plan = plan(&q, "p", &store, &gw, &Config::default(), &mut log).unwrap();
        assert_eq!(plan.instances[0].id, store.nodes().next().unwrap().id);
        assert!(plan.queue.len() <= 3);
        for p in &plan.queue {
            assert!(plan.pool.contains(&SolutionPath { rank_source: RankSource::Fallback, ..p.clone() }));
        }
    }
}
