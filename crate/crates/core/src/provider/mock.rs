//! Deterministic offline backend.
//!
//! Chat replies follow fixed rules per role and are a pure function of the
//! request slots and the seed. Solving is simulated: the generator looks the
//! problem up in an answer key and emits a script whose `STUB:` directive is
//! correct with a probability that depends on whether cluster guidance was
//! supplied. Rolls come from hashing the inputs, so reruns are bit-identical.
//!
//! Embeddings hash unigrams and bigrams of the lowercased text to seeded
//! pseudo-random vectors and sum them, so texts sharing tokens land close
//! together on the sphere.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::format::{fence, labeled_sections, parse_knowledge, render_knowledge};
use super::{ChatBackend, ChatRequest, EmbedBackend, LlmRole, ProviderError};
use crate::domain::{Extracted, GroundTruth, Problem};
use crate::sandbox::stub::StubOutcome;

/// Success probabilities of the simulated solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockSkills {
    /// Generation conditioned on non-empty guidance.
    pub guided: f64,
    /// Generation with no guidance.
    pub bare: f64,
    /// Repair of a failing script when pitfalls are supplied (halved without).
    pub fix: f64,
}

impl Default for MockSkills {
    fn default() -> Self {
        Self {
            guided: 0.8,
            bare: 0.45,
            fix: 0.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    name: String,
    seed: u64,
    dim: usize,
    skills: MockSkills,
    answers: HashMap<String, GroundTruth>,
}

const SOLVERS: &[(&str, &str)] = &[
    ("pulp", "pulp"),
    ("ortools", "ortools"),
    ("scipy", "scipy"),
    ("networkx", "networkx"),
    ("gurobi", "gurobipy"),
];

impl MockBackend {
    pub fn new(name: impl Into<String>, seed: u64, dim: usize) -> Self {
        Self {
            name: name.into(),
            seed,
            dim,
            skills: MockSkills::default(),
            answers: HashMap::new(),
        }
    }

    pub fn with_skills(mut self, skills: MockSkills) -> Self {
        self.skills = skills;
        self
    }

    pub fn with_answer_key(mut self, problems: &[Problem]) -> Self {
        for p in problems {
            if let Some(gt) = &p.ground_truth {
                self.answers.insert(p.text.trim().to_string(), gt.clone());
            }
        }
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn roll(&self, parts: &[&str]) -> f64 {
        let mut h = fnv1a(FNV_OFFSET ^ self.seed, b"roll");
        for p in parts {
            h = fnv1a(h, p.as_bytes());
            h = fnv1a(h, &[0xff]);
        }
        ChaCha8Rng::seed_from_u64(h).random::<f64>()
    }

    fn verify(&self, req: &ChatRequest<'_>) -> String {
        let task = slot(req, "task");
        if task == "check" {
            return "PASS".into();
        }
        let candidate = slot(req, "candidate");
        let signature = first_line(candidate);
        let summary = slot(req, "cluster_summary");
        let entries = split_numbered(summary);
        let matches = |text: &str| {
            text.lines()
                .map(|l| l.trim().trim_start_matches("- ").trim())
                .any(|l| !signature.is_empty() && l == signature)
        };
        match entries {
            None => {
                if matches(summary) {
                    "MATCH".into()
                } else {
                    "NO_MATCH".into()
                }
            }
            Some(entries) => entries
                .iter()
                .find(|(_, text)| matches(text))
                .map(|(n, _)| format!("MATCH {n}"))
                .unwrap_or_else(|| "NO_MATCH".into()),
        }
    }

    fn synthesize(&self, req: &ChatRequest<'_>) -> String {
        let mut merged = parse_knowledge(slot(req, "current")).unwrap_or_default();
        if let Ok(batch) = parse_knowledge(slot(req, "batch")) {
            merged.merge_from(&batch);
        }
        fence("knowledge", &render_knowledge(&merged))
    }

    fn select(&self, req: &ChatRequest<'_>) -> String {
        let n = split_numbered(slot(req, "paths")).map_or(0, |e| e.len());
        let order: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        format!("RANK: {}", order.join(","))
    }

    fn extract(&self, req: &ChatRequest<'_>) -> String {
        let solution = slot(req, "solution");
        let (model, code) = labeled_sections(solution);
        let model = model.unwrap_or_else(|| solution.to_string());
        let code = code.unwrap_or_default();
        let signature = first_line(&model);
        match slot(req, "task") {
            "split" => split_heuristic(solution)
                .map(|(m, c)| format!("{}\n{}", fence("model", &m), fence("python", &c)))
                .unwrap_or_else(|| "UNSPLITTABLE".into()),
            "approach" => {
                let solver = solver_line(&code).unwrap_or("the modeling library");
                format!("APPROACH: {signature}; solve with {solver}")
            }
            "checklist" => format!("CHECKLIST: every constraint and variable domain of {signature} is encoded"),
            "pitfall" => {
                let failures = slot(req, "failures");
                match failures.lines().map(str::trim).find(|l| !l.is_empty() && *l != "(none)") {
                    Some(first) => format!("PITFALL: {signature}: {}", strip_round(first)),
                    None => "NONE".into(),
                }
            }
            other => format!("unsupported extractor task {other:?}"),
        }
    }

    fn answer_for(&self, problem: &str) -> Option<&GroundTruth> {
        self.answers.get(problem.trim())
    }

    fn generate(&self, req: &ChatRequest<'_>) -> String {
        let problem = slot(req, "problem");
        let guidance = slot(req, "guidance");
        let model = match slot(req, "model") {
            "" => self.model_text(problem, guidance),
            m => m.to_string(),
        };
        match slot(req, "phase") {
            "model" => fence("model", &model),
            "code" => fence("python", &self.code_text(req, problem, guidance, &model)),
            _ => format!(
                "{}\n\n{}",
                fence("model", &model),
                fence("python", &self.code_text(req, problem, guidance, &model))
            ),
        }
    }

    fn model_text(&self, problem: &str, guidance: &str) -> String {
        let head = first_line(problem);
        let hint = guidance_items(guidance).first().cloned().unwrap_or("none");
        let body: String = problem.lines().skip(1).collect::<Vec<_>>().join(" ");
        let body: String = body.chars().take(160).collect();
        format!("Formulation: {head}\nGuided by: {hint}\nData: {body}")
    }

    fn code_text(&self, req: &ChatRequest<'_>, problem: &str, guidance: &str, model: &str) -> String {
        let guided = !guidance_items(guidance).is_empty();
        let skill = if guided { self.skills.guided } else { self.skills.bare };
        let round = slot(req, "round");
        let u = self.roll(&["gen", problem, guidance, round]);
        let outcome = match self.answer_for(problem) {
            Some(gt) if u < skill => StubOutcome::Success(truth(gt)),
            Some(gt) => {
                if self.roll(&["mode", problem, guidance, round]) < 0.5 {
                    StubOutcome::RuntimeError("NameError: name 'x' is not defined".into())
                } else {
                    let mut wrong = truth(gt);
                    wrong.objective = gt.objective + 1.0 + 0.1 * gt.objective.abs();
                    StubOutcome::Success(wrong)
                }
            }
            None => StubOutcome::Success(Extracted {
                objective: (u * 100.0).round(),
                requirements: Default::default(),
            }),
        };
        let solver = pick_solver(guidance, problem);
        let module = SOLVERS
            .iter()
            .find(|(name, _)| *name == solver)
            .map_or("pulp", |(_, m)| m);
        format!(
            "# solver: {solver}\nimport {module}\n# {}\n{}",
            first_line(model),
            outcome.to_directive()
        )
    }

    fn fix(&self, req: &ChatRequest<'_>) -> String {
        let code = slot(req, "code");
        let pitfalls = slot(req, "pitfalls");
        let guided = !guidance_items(pitfalls).is_empty();
        let skill = if guided { self.skills.fix } else { self.skills.fix / 2.0 };
        let u = self.roll(&["fix", code, pitfalls]);
        let fixed_outcome = match (StubOutcome::find(code), self.answer_for(slot(req, "problem"))) {
            (Some(StubOutcome::Success(_)), _) => None,
            (_, Some(gt)) if u < skill => Some(StubOutcome::Success(truth(gt))),
            _ => None,
        };
        let mut lines: Vec<String> = code
            .lines()
            .filter(|l| !l.trim_start().starts_with("# patched"))
            .map(|l| match (&fixed_outcome, StubOutcome::is_directive_line(l)) {
                (Some(outcome), true) => outcome.to_directive(),
                _ => l.to_string(),
            })
            .collect();
        lines.push(format!("# patched {:08x}", (u * f64::from(u32::MAX)) as u32));
        fence("python", &lines.join("\n"))
    }
}

fn truth(gt: &GroundTruth) -> Extracted {
    Extracted {
        objective: gt.objective,
        requirements: gt.requirements.clone(),
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest<'_>) -> Result<String, ProviderError> {
        Ok(match req.role {
            LlmRole::Verifier => self.verify(req),
            LlmRole::Synthesizer => self.synthesize(req),
            LlmRole::Selector => self.select(req),
            LlmRole::Extractor => self.extract(req),
            LlmRole::Generator => self.generate(req),
            LlmRole::Fixer => self.fix(req),
        })
    }
}

impl EmbedBackend for MockBackend {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        let mut features: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
        features.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
        if features.is_empty() {
            features.push(lower);
        }
        let mut v = vec![0.0; self.dim];
        for f in &features {
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(FNV_OFFSET ^ self.seed, f.as_bytes()));
            for x in v.iter_mut() {
                *x += rng.random::<f64>() * 2.0 - 1.0;
            }
        }
        Ok(v)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn slot<'a>(req: &'a ChatRequest<'_>, name: &str) -> &'a str {
    req.slots.get(name).map_or("", String::as_str)
}

fn first_line(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

/// Bulleted guidance items, ignoring the `(none)` placeholder.
fn guidance_items(text: &str) -> Vec<&str> {
    text.lines()
        .map(|l| l.trim().trim_start_matches("- ").trim())
        .filter(|l| !l.is_empty() && *l != "(none)")
        .collect()
}

/// Splits `[#n] ...` numbered entries; `None` when there are no markers.
fn split_numbered(text: &str) -> Option<Vec<(usize, String)>> {
    let mut entries: Vec<(usize, String)> = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("[#") {
            if let Some((num, tail)) = rest.split_once(']') {
                if let Ok(n) = num.parse() {
                    entries.push((n, tail.trim().to_string()));
                    continue;
                }
            }
        }
        if let Some((_, body)) = entries.last_mut() {
            body.push('\n');
            body.push_str(line);
        }
    }
    (!entries.is_empty()).then_some(entries)
}

fn solver_line(code: &str) -> Option<&str> {
    code.lines()
        .find_map(|l| l.trim().strip_prefix("# solver:"))
        .map(str::trim)
}

fn pick_solver<'a>(guidance: &'a str, problem: &str) -> &'a str {
    if let Some(pos) = guidance.find("solve with ") {
        let rest = &guidance[pos + "solve with ".len()..];
        let name = rest.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("");
        if let Some((n, _)) = SOLVERS.iter().find(|(n, _)| *n == name) {
            return n;
        }
    }
    let p = problem.to_lowercase();
    if p.contains("assign") || p.contains("schedul") {
        "ortools"
    } else if p.contains("diet") || p.contains("blend") {
        "scipy"
    } else if p.contains("route") || p.contains("path") || p.contains("flow") {
        "networkx"
    } else {
        "pulp"
    }
}

fn strip_round(line: &str) -> &str {
    line.split_once("]: ").map_or(line, |(_, rest)| rest)
}

/// Splits an unlabeled solution at the first line that looks like code.
fn split_heuristic(solution: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = solution.lines().collect();
    let start = lines.iter().position(|l| {
        let t = l.trim_start();
        t.starts_with("import ")
            || t.starts_with("from ")
            || t.starts_with("def ")
            || t.starts_with("# solver:")
    })?;
    let model = lines[..start].join("\n").trim().to_string();
    let code = lines[start..].join("\n").trim().to_string();
    (!model.is_empty() && !code.is_empty()).then_some((model, code))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{slots, Slots};

    fn ask(backend: &MockBackend, role: LlmRole, s: &Slots) -> String {
        backend
            .complete(&ChatRequest {
                role,
                slots: s,
                prompt: "",
                retry: 0,
            })
            .unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn embedding_is_deterministic_and_seeded() {
        let a = MockBackend::new("m", 1, 16);
        assert_eq!(a.embed_raw("abc").unwrap(), a.embed_raw("abc").unwrap());
        let b = MockBackend::new("m", 2, 16);
        assert_ne!(a.embed_raw("abc").unwrap(), b.embed_raw("abc").unwrap());
        assert!(norm(&a.embed_raw("").unwrap()) > 0.0);
    }

    #[test]
    fn shared_tokens_raise_similarity() {
        use crate::domain::{similarity, Embedding};
        let m = MockBackend::new("m", 3, 64);
        let e = |t: &str| Embedding::new(m.embed_raw(t).unwrap()).unwrap();
        let base = e("knapsack selection of items under a weight capacity");
        let near = e("knapsack selection of items under a volume capacity");
        let far = e("shortest route through a road network");
        assert!(similarity(&base, &near).unwrap() > similarity(&base, &far).unwrap());
    }

    #[test]
    fn assignment_verifier_picks_numbered_entry() {
        let m = MockBackend::new("m", 1, 8);
        let s = slots([
            ("candidate", "Formulation: knapsack\nmore"),
            ("cluster_summary", "[#1] cluster m0\n- Formulation: diet\n[#2] cluster m1\n- Formulation: knapsack"),
        ]);
        assert_eq!(ask(&m, LlmRole::Verifier, &s), "MATCH 2");
        let s = slots([("candidate", "Formulation: flow"), ("cluster_summary", "[#1] x\n- Formulation: diet")]);
        assert_eq!(ask(&m, LlmRole::Verifier, &s), "NO_MATCH");
    }

    #[test]
    fn synthesizer_unions_and_dedups() {
        let m = MockBackend::new("m", 1, 8);
        let s = slots([
            ("current", "APPROACH: a"),
            ("batch", "APPROACH: a\nPITFALL: p1\nPITFALL: p2\nPITFALL: p1"),
        ]);
        let k = parse_knowledge(&ask(&m, LlmRole::Synthesizer, &s)).unwrap();
        assert_eq!(k.approach, vec!["a"]);
        assert_eq!(k.pitfall, vec!["p1", "p2"]);
    }

    #[test]
    fn selector_is_identity_order() {
        let m = MockBackend::new("m", 1, 8);
        let s = slots([("problem", "p"), ("paths", "[#0] a\n[#1] b\n[#2] c")]);
        assert_eq!(ask(&m, LlmRole::Selector, &s), "RANK: 0,1,2");
    }

    #[test]
    fn extractor_emits_one_item_per_tier() {
        let m = MockBackend::new("m", 1, 8);
        let sol = "```model\nFormulation: knapsack\n```\n```python\n# solver: pulp\nimport pulp\n```";
        for (task, kw) in [("approach", "APPROACH:"), ("checklist", "CHECKLIST:"), ("pitfall", "PITFALL:")] {
            let s = slots([("task", task), ("sample_type", "B"), ("solution", sol), ("failures", "round 1 [runtime_error]: boom")]);
            let out = ask(&m, LlmRole::Extractor, &s);
            assert!(out.starts_with(kw), "{out}");
            assert_eq!(out.lines().count(), 1);
        }
        let s = slots([("task", "pitfall"), ("sample_type", "A"), ("solution", sol), ("failures", "")]);
        assert_eq!(ask(&m, LlmRole::Extractor, &s), "NONE");
    }

    #[test]
    fn generator_uses_answer_key() {
        let problem = Problem {
            id: "p".into(),
            text: "Knapsack loading.\nitems...".into(),
            ground_truth: Some(GroundTruth {
                objective: 70.0,
                requirements: Default::default(),
            }),
            source: String::new(),
        };
        let always = MockBackend::new("m", 1, 8)
            .with_skills(MockSkills {
                guided: 1.0,
                bare: 1.0,
                fix: 1.0,
            })
            .with_answer_key(std::slice::from_ref(&problem));
        let s = slots([("phase", "code"), ("problem", &problem.text), ("guidance", "(none)")]);
        let out = ask(&always, LlmRole::Generator, &s);
        assert_eq!(
            StubOutcome::find(&out),
            Some(StubOutcome::Success(Extracted {
                objective: 70.0,
                requirements: Default::default()
            }))
        );
    }

    #[test]
    fn fixer_changes_the_script() {
        let m = MockBackend::new("m", 1, 8);
        let code = format!("import pulp\n{}", StubOutcome::RuntimeError("boom".into()).to_directive());
        let s = slots([("code", &code), ("error", "[runtime_error]"), ("pitfalls", "(none)"), ("checklist", "(none)")]);
        let out = super::super::format::parse_block(&ask(&m, LlmRole::Fixer, &s)).unwrap();
        assert_ne!(out, code);
    }

    #[test]
    fn split_heuristic_needs_both_parts() {
        assert_eq!(
            split_heuristic("maximize x\nimport pulp\nx=1"),
            Some(("maximize x".into(), "import pulp\nx=1".into()))
        );
        assert_eq!(split_heuristic("import pulp\nx = 1"), None);
        assert_eq!(split_heuristic("just words"), None);
    }
}
