//! Uniform access to chat-completion and embedding backends.
//!
//! Every LLM call goes through [`Gateway::chat`] with a role and a map of
//! template slots. The role selects the prompt template; the backend sees the
//! rendered prompt (and, for the mock, the raw slots). Each call is appended
//! to a caller-owned [`CallLog`] so construction and solve traces carry an
//! audit of every prompt.

pub mod format;
pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, ProviderKind};
use crate::domain::{DomainError, Embedding};
use format::FormatError;

pub use http::{HttpChatBackend, HttpEmbedBackend};
pub use mock::{MockBackend, MockSkills};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("missing template slot {slot:?} for role {role}")]
    MissingSlot { role: LlmRole, slot: String },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("{role}: {source}")]
    Malformed {
        role: LlmRole,
        #[source]
        source: FormatError,
    },
    #[error("bad response body: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmRole {
    Extractor,
    Verifier,
    Synthesizer,
    Selector,
    Generator,
    Fixer,
}

impl LlmRole {
    pub const ALL: [LlmRole; 6] = [
        LlmRole::Extractor,
        LlmRole::Verifier,
        LlmRole::Synthesizer,
        LlmRole::Selector,
        LlmRole::Generator,
        LlmRole::Fixer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LlmRole::Extractor => "extractor",
            LlmRole::Verifier => "verifier",
            LlmRole::Synthesizer => "synthesizer",
            LlmRole::Selector => "selector",
            LlmRole::Generator => "generator",
            LlmRole::Fixer => "fixer",
        }
    }
}

impl fmt::Display for LlmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Slots = BTreeMap<String, String>;

/// Builds a slot map from `(name, value)` pairs.
pub fn slots<const N: usize>(pairs: [(&str, &str); N]) -> Slots {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z_]+)(\?)?\}").unwrap());

/// A prompt template with `{slot}` (required) and `{slot?}` (optional) placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn required_slots(&self) -> Vec<String> {
        PLACEHOLDER
            .captures_iter(&self.text)
            .filter(|c| c.get(2).is_none())
            .map(|c| c[1].to_string())
            .collect()
    }

    pub fn render(&self, role: LlmRole, slots: &Slots) -> Result<String, ProviderError> {
        if let Some(slot) = self.required_slots().into_iter().find(|s| !slots.contains_key(s)) {
            return Err(ProviderError::MissingSlot { role, slot });
        }
        Ok(PLACEHOLDER
            .replace_all(&self.text, |c: &regex::Captures<'_>| {
                slots.get(&c[1]).cloned().unwrap_or_default()
            })
            .into_owned())
    }
}

/// One template per role.
#[derive(Debug, Clone)]
pub struct Templates {
    by_role: BTreeMap<LlmRole, PromptTemplate>,
}

impl Templates {
    pub fn get(&self, role: LlmRole) -> &PromptTemplate {
        &self.by_role[&role]
    }

    pub fn with(mut self, role: LlmRole, template: PromptTemplate) -> Self {
        self.by_role.insert(role, template);
        self
    }
}

impl Default for Templates {
    fn default() -> Self {
        let by_role = LlmRole::ALL
            .into_iter()
            .map(|r| (r, PromptTemplate::new(default_template(r))))
            .collect();
        Self { by_role }
    }
}

fn default_template(role: LlmRole) -> &'static str {
    match role {
        LlmRole::Extractor => include_str!("templates/extractor.txt"),
        LlmRole::Verifier => include_str!("templates/verifier.txt"),
        LlmRole::Synthesizer => include_str!("templates/synthesizer.txt"),
        LlmRole::Selector => include_str!("templates/selector.txt"),
        LlmRole::Generator => include_str!("templates/generator.txt"),
        LlmRole::Fixer => include_str!("templates/fixer.txt"),
    }
}

/// What a backend receives for one completion.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub role: LlmRole,
    pub slots: &'a Slots,
    pub prompt: &'a str,
    /// 0 for the first call, 1 for the format re-prompt.
    pub retry: u32,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ProviderError>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Audit record of one chat call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRecord {
    pub role: LlmRole,
    pub retry: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub type CallLog = Vec<ChatRecord>;

const REPROMPT_SUFFIX: &str = "\n\nYour previous reply could not be parsed ({error}). \
Reply again using exactly the required format.";

/// Chat + embedding access with templates and call logging.
#[derive(Clone)]
pub struct Gateway {
    chat: Arc<dyn ChatBackend>,
    embed: Arc<dyn EmbedBackend>,
    templates: Templates,
    dim: usize,
    verbose: bool,
    model: String,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.model)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        chat: Arc<dyn ChatBackend>,
        embed: Arc<dyn EmbedBackend>,
        dim: usize,
        model: impl Into<String>,
    ) -> Self {
        Self {
            chat,
            embed,
            templates: Templates::default(),
            dim,
            verbose: false,
            model: model.into(),
        }
    }

    /// Mock gateway: one [`MockBackend`] serving both chat and embeddings.
    pub fn mock(backend: MockBackend) -> Self {
        let dim = backend.dim();
        let model = backend.name().to_string();
        let backend = Arc::new(backend);
        Self::new(backend.clone(), backend, dim, model)
    }

    /// Builds the gateway described by `config`. The mock backend receives
    /// `answer_key` so it can simulate solving labeled problems.
    pub fn from_config(
        config: &Config,
        answer_key: &[crate::domain::Problem],
    ) -> Result<Self, ProviderError> {
        let gw = match config.provider {
            ProviderKind::Mock => Self::mock(
                MockBackend::new(&config.chat_model, config.seed, config.embedding_dim)
                    .with_skills(MockSkills {
                        guided: config.mock_guided_skill,
                        bare: config.mock_bare_skill,
                        fix: config.mock_fix_skill,
                    })
                    .with_answer_key(answer_key),
            ),
            ProviderKind::Http => {
                let chat = HttpChatBackend::from_config(config)?;
                let embed = HttpEmbedBackend::from_config(config)?;
                Self::new(
                    Arc::new(chat),
                    Arc::new(embed),
                    config.embedding_dim,
                    config.chat_model.clone(),
                )
            }
        };
        Ok(gw.with_verbose(config.verbose_trace))
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_verbose(mut self, verbose: bool) -> Self {
        self.verbose = verbose;
        self
    }

    pub fn with_chat_backend(mut self, chat: Arc<dyn ChatBackend>) -> Self {
        self.chat = chat;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    /// One completion for `role`, recorded in `log`.
    pub fn chat(
        &self,
        role: LlmRole,
        slots: &Slots,
        log: &mut CallLog,
    ) -> Result<String, ProviderError> {
        let prompt = self.templates.get(role).render(role, slots)?;
        self.send(role, slots, &prompt, 0, log)
    }

    fn send(
        &self,
        role: LlmRole,
        slots: &Slots,
        prompt: &str,
        retry: u32,
        log: &mut CallLog,
    ) -> Result<String, ProviderError> {
        let request = ChatRequest {
            role,
            slots,
            prompt,
            retry,
        };
        let result = self.chat.complete(&request).and_then(|text| {
            if text.trim().is_empty() {
                Err(ProviderError::EmptyCompletion)
            } else {
                Ok(text)
            }
        });
        log.push(ChatRecord {
            role,
            retry,
            ok: result.is_ok(),
            prompt: self.verbose.then(|| prompt.to_string()),
            response: match (&result, self.verbose) {
                (Ok(text), true) => Some(text.clone()),
                _ => None,
            },
            error: result.as_ref().err().map(|e| e.to_string()),
        });
        result
    }

    /// Chat and parse, re-prompting once on a format error.
    ///
    /// Transport and empty-completion errors are returned as-is; a reply that
    /// is still unparseable after the re-prompt yields `Malformed`.
    pub fn chat_parsed<T>(
        &self,
        role: LlmRole,
        slots: &Slots,
        log: &mut CallLog,
        parse: impl Fn(&str) -> Result<T, FormatError>,
    ) -> Result<T, ProviderError> {
        let prompt = self.templates.get(role).render(role, slots)?;
        let first = self.send(role, slots, &prompt, 0, log)?;
        let err = match parse(&first) {
            Ok(v) => return Ok(v),
            Err(e) => e,
        };
        tracing::debug!(%role, error = %err, "re-prompting after malformed completion");
        let retry_prompt = format!("{prompt}{}", REPROMPT_SUFFIX.replace("{error}", &err.0));
        let second = self.send(role, slots, &retry_prompt, 1, log)?;
        parse(&second).map_err(|source| ProviderError::Malformed { role, source })
    }

    /// Unit-normalized embedding of `text` with the gateway's dimension.
    pub fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let raw = self.embed.embed_raw(text)?;
        if raw.len() != self.dim {
            return Err(ProviderError::DimensionMismatch {
                expected: self.dim,
                got: raw.len(),
            });
        }
        Ok(Embedding::new(raw)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Canned(Mutex<Vec<&'static str>>);

    impl ChatBackend for Canned {
        fn complete(&self, _: &ChatRequest<'_>) -> Result<String, ProviderError> {
            Ok(self.0.lock().unwrap().remove(0).to_string())
        }
    }

    fn canned(replies: Vec<&'static str>) -> Gateway {
        Gateway::mock(MockBackend::new("mock", 1, 8)).with_chat_backend(Arc::new(Canned(Mutex::new(replies))))
    }

    #[test]
    fn every_role_has_a_template_with_slots() {
        let t = Templates::default();
        for role in LlmRole::ALL {
            assert!(!t.get(role).required_slots().is_empty(), "{role}");
        }
    }

    #[test]
    fn render_requires_slots() {
        let t = PromptTemplate::new("a {x} b {y?}");
        assert_eq!(t.render(LlmRole::Fixer, &slots([("x", "1")])).unwrap(), "a 1 b ");
        assert!(matches!(
            t.render(LlmRole::Fixer, &slots([("y", "1")])),
            Err(ProviderError::MissingSlot { .. })
        ));
    }

    #[test]
    fn mock_verifier_examples() {
        let gw = Gateway::mock(MockBackend::new("mock", 1, 8));
        let mut log = CallLog::new();
        let out = gw
            .chat(LlmRole::Verifier, &slots([("candidate", "LP"), ("cluster_summary", "LP")]), &mut log)
            .unwrap();
        assert_eq!(out, "MATCH");
        let out = gw
            .chat(LlmRole::Verifier, &slots([("candidate", "LP"), ("cluster_summary", "CP")]), &mut log)
            .unwrap();
        assert_eq!(out, "NO_MATCH");
        assert_eq!(log.len(), 2);
        assert!(log.iter().all(|r| r.role == LlmRole::Verifier && r.ok));
    }

    #[test]
    fn chat_parsed_reprompts_once() {
        let gw = canned(vec!["garbage", "RANK: 1,0"]);
        let mut log = CallLog::new();
        let out = gw
            .chat_parsed(LlmRole::Selector, &slots([("problem", "p"), ("paths", "x")]), &mut log, |r| {
                format::parse_ranking(r, 2)
            })
            .unwrap();
        assert_eq!(out, vec![1, 0]);
        assert_eq!(log.iter().map(|r| r.retry).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn chat_parsed_gives_up_after_retry() {
        let gw = canned(vec!["garbage", "still garbage"]);
        let mut log = CallLog::new();
        let err = gw
            .chat_parsed(LlmRole::Selector, &slots([("problem", "p"), ("paths", "x")]), &mut log, |r| {
                format::parse_ranking(r, 2)
            })
            .unwrap_err();
        assert!(matches!(err, ProviderError::Malformed { role: LlmRole::Selector, .. }));
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let gw = canned(vec!["   "]);
        let mut log = CallLog::new();
        let err = gw
            .chat(LlmRole::Generator, &slots([("phase", "model"), ("problem", "p"), ("guidance", "")]), &mut log)
            .unwrap_err();
        assert!(matches!(err, ProviderError::EmptyCompletion));
        assert!(!log[0].ok);
    }

    #[test]
    fn verbose_records_prompt_and_response() {
        let gw = canned(vec!["PASS"]).with_verbose(true);
        let mut log = CallLog::new();
        gw.chat(
            LlmRole::Verifier,
            &slots([("task", "check"), ("candidate", "m"), ("cluster_summary", "- item")]),
            &mut log,
        )
        .unwrap();
        assert!(log[0].prompt.as_deref().unwrap().contains("- item"));
        assert_eq!(log[0].response.as_deref(), Some("PASS"));
    }

    #[test]
    fn embed_checks_text_and_dim() {
        let gw = Gateway::mock(MockBackend::new("mock", 1, 8));
        assert!(matches!(gw.embed("  "), Err(ProviderError::EmptyText)));
        let e = gw.embed("abc").unwrap();
        assert_eq!(e.dim(), 8);
        let wrong = Gateway::new(
            Arc::new(MockBackend::new("mock", 1, 8)),
            Arc::new(MockBackend::new("mock", 1, 4)),
            8,
            "mock",
        );
        assert!(matches!(
            wrong.embed("abc"),
            Err(ProviderError::DimensionMismatch { expected: 8, got: 4 })
        ));
    }
}
