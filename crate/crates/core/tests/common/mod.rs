#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dcm_core::config::Config;
use dcm_core::provider::{ChatBackend, ChatRequest, Gateway, LlmRole, MockBackend, ProviderError};
use dcm_core::sandbox::StubOutcome;
use dcm_core::store::{BuildSettings, MemoryStore, Provenance};
use dcm_core::{
    Cluster, ClusterId, Embedding, ExperienceNode, Extracted, GroundTruth, Knowledge, NodeId, Problem,
    SampleType, Space,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        if let Ok(e) = Embedding::new(v) {
            return e;
        }
    }
}

/// Random valid store through the public constructor. With `dup_rate > 0`
/// some embeddings repeat earlier ones, producing exact similarity ties.
pub fn random_store(rng: &mut ChaCha8Rng, nodes: usize, max_clusters: u32, dim: usize, dup_rate: f64) -> MemoryStore {
    let mut pool_m: Vec<Embedding> = Vec::new();
    let mut pool_c: Vec<Embedding> = Vec::new();
    let mut list = Vec::with_capacity(nodes);
    for i in 0..nodes {
        let pick = |rng: &mut ChaCha8Rng, pool: &mut Vec<Embedding>| {
            if !pool.is_empty() && rng.random_bool(dup_rate) {
                pool[rng.random_range(0..pool.len())].clone()
            } else {
                let e = random_unit(rng, dim);
                pool.push(e.clone());
                e
            }
        };
        let e_m = pick(rng, &mut pool_m);
        let e_c = pick(rng, &mut pool_c);
        let sample_type = [SampleType::A, SampleType::B, SampleType::C][i % 3];
        let phi = match sample_type {
            SampleType::A => Knowledge {
                approach: vec![format!("approach {i}")],
                checklist: vec![format!("check {i}")],
                pitfall: vec![],
            },
            SampleType::B => Knowledge {
                approach: vec![format!("approach {i}")],
                checklist: vec![],
                pitfall: vec![format!("pitfall {i}")],
            },
            SampleType::C => Knowledge { pitfall: vec![format!("pitfall {i}")], ..Default::default() },
        };
        list.push(ExperienceNode {
            id: NodeId(i as u32),
            problem_id: format!("p{i}"),
            sample_type,
            modeling_text: format!("model {i}"),
            coding_text: format!("code {i}"),
            e_m,
            e_c,
            phi,
            modeling_cluster: ClusterId(rng.random_range(0..max_clusters)),
            coding_cluster: ClusterId(rng.random_range(0..max_clusters)),
        });
    }
    let mut clusters = Vec::new();
    for space in [Space::Modeling, Space::Coding] {
        let mut members: BTreeMap<ClusterId, Vec<&ExperienceNode>> = BTreeMap::new();
        for n in &list {
            let cid = match space {
                Space::Modeling => n.modeling_cluster,
                Space::Coding => n.coding_cluster,
            };
            members.entry(cid).or_default().push(n);
        }
        for (id, nodes) in members {
            let centroid = Embedding::mean_of(nodes.iter().map(|n| match space {
                Space::Modeling => &n.e_m,
                Space::Coding => &n.e_c,
            }))
            .unwrap_or_else(|_| nodes[0].e_m.clone());
            let tag = format!("{}{}", space.prefix(), id.0);
            clusters.push(Cluster {
                id,
                space,
                centroid,
                members: nodes.iter().map(|n| n.id).collect(),
                knowledge: Knowledge {
                    approach: vec![format!("approach of {tag}: use a MILP with binary picks")],
                    checklist: vec![format!("checklist of {tag}: every capacity row present")],
                    pitfall: vec![format!("pitfall of {tag}: forgetting integrality")],
                },
                knowledge_version: 1,
                pending_phis: Vec::new(),
            });
        }
    }
    MemoryStore::from_parts(
        dim,
        BuildSettings::from(&Config::default()),
        Provenance { chat_model: Some("mock-a".into()), embed_model: None, seed: Some(1), subsample: None },
        list,
        clusters,
    )
    .expect("generated store is valid")
}

/// Chat backend driven by a closure; embeddings come from a seeded mock.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
        (self.0)(req)
    }
}

pub fn scripted<F>(dim: usize, f: F) -> Gateway
where
    F: Fn(&ChatRequest<'_>) -> Result<String, ProviderError> + Send + Sync + 'static,
{
    Gateway::mock(MockBackend::new("scripted", 1, dim)).with_chat_backend(Arc::new(FnBackend(f)))
}

pub fn code_block(outcome: &StubOutcome) -> String {
    format!("```python\nimport pulp\n{}\n```", outcome.to_directive())
}

pub fn success(objective: f64) -> StubOutcome {
    StubOutcome::Success(Extracted { objective, requirements: BTreeMap::new() })
}

/// Scripted pipeline: the n-th code generation (0-based) succeeds iff
/// `succeed_on(n)`; verifier passes, selector keeps pool order, fixer never
/// fixes.
pub fn pipeline_gateway(dim: usize, succeed_on: impl Fn(usize) -> bool + Send + Sync + 'static) -> Gateway {
    let code_calls = Arc::new(AtomicUsize::new(0));
    scripted(dim, move |req| {
        Ok(match req.role {
            LlmRole::Generator if req.slots["phase"] == "model" => "```model\nmax sum v_i x_i\n```".into(),
            LlmRole::Generator => {
                let n = code_calls.fetch_add(1, Ordering::SeqCst);
                if succeed_on(n) {
                    code_block(&success(42.0))
                } else {
                    code_block(&StubOutcome::RuntimeError("ZeroDivisionError: division by zero".into()))
                }
            }
            LlmRole::Verifier => "PASS".into(),
            LlmRole::Selector => "RANK: 0,1,2,3,4,5,6,7,8".into(),
            LlmRole::Fixer => format!("```python\n{}\n# attempted fix\n```", req.slots["code"]),
            _ => "NONE".into(),
        })
    })
}

/// A labeled problem for scripted scenarios.
pub fn labeled(id: &str, text: &str, objective: f64) -> Problem {
    Problem {
        id: id.into(),
        text: text.into(),
        ground_truth: Some(GroundTruth { objective, requirements: BTreeMap::new() }),
        source: "scenario".into(),
    }
}

pub fn quiet_config() -> Config {
    Config { record_timing: false, embedding_dim: 32, ..Config::default() }
}
