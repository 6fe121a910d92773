//! Run configuration.
//!
//! The on-disk format is a flat `key = value` file (a TOML subset: no tables).
//! Every key is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Tolerance;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic in-process backend.
    Mock,
    /// Chat-completions / embeddings REST endpoints.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorKind {
    /// Decodes `STUB:` directives without spawning processes.
    Stub,
    /// Runs scripts through the external execution harness.
    Harness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Retrieval top-k, shared by cluster assignment, instance/cluster
    /// retrieval and graph neighbor expansion.
    pub retrieval_top_k: usize,
    /// Pending instance-knowledge count that triggers a cluster knowledge update.
    pub update_threshold: usize,
    /// Maximum number of solution paths kept in the queue.
    pub planning_candidates: usize,
    /// Repair rounds per path before backtracking.
    pub repair_limit: usize,
    pub exec_timeout_seconds: f64,
    pub max_classification_rounds: u32,
    pub numeric_rel_tolerance: f64,
    pub embedding_dim: usize,
    pub seed: u64,
    /// Character budget for each cluster summary shown to the verifier/selector.
    pub summary_char_budget: usize,
    pub workers: usize,
    /// Record timings in traces; disable for byte-stable output.
    pub record_timing: bool,
    /// Embed rendered prompts and raw responses in traces and logs.
    pub verbose_trace: bool,

    pub provider: ProviderKind,
    pub chat_endpoint: String,
    pub chat_model: String,
    pub embed_endpoint: String,
    pub embed_model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_seconds: f64,
    pub retries: u32,
    /// Environment variable holding the API key (credentials never live in the file).
    pub api_key_env: String,
    /// Requests per second per endpoint; 0 disables rate limiting.
    pub rate_limit_per_second: f64,

    /// Mock backend: chance a knowledge-conditioned solve is right.
    pub mock_guided_skill: f64,
    /// Mock backend: chance a bare (no knowledge) solve is right.
    pub mock_bare_skill: f64,
    /// Mock backend: chance a repair with pitfall guidance succeeds.
    pub mock_fix_skill: f64,

    pub executor: ExecutorKind,
    pub harness_path: PathBuf,
    pub python: String,
    pub max_output_bytes: usize,
    pub max_parallel_executions: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            retrieval_top_k: 3,
            update_threshold: 5,
            planning_candidates: 3,
            repair_limit: 2,
            exec_timeout_seconds: 60.0,
            max_classification_rounds: 3,
            numeric_rel_tolerance: 1e-4,
            embedding_dim: 64,
            seed: 7,
            summary_char_budget: 600,
            workers: 1,
            record_timing: true,
            verbose_trace: false,
            provider: ProviderKind::Mock,
            chat_endpoint: "http://127.0.0.1:8000/v1".into(),
            chat_model: "mock-a".into(),
            embed_endpoint: "http://127.0.0.1:8000/v1".into(),
            embed_model: "mock-embed".into(),
            temperature: 0.0,
            max_output_tokens: 2048,
            request_timeout_seconds: 120.0,
            retries: 2,
            api_key_env: "DCM_API_KEY".into(),
            rate_limit_per_second: 0.0,
            mock_guided_skill: 0.8,
            mock_bare_skill: 0.45,
            mock_fix_skill: 0.6,
            executor: ExecutorKind::Stub,
            harness_path: PathBuf::from("harness/run.py"),
            python: "python3".into(),
            max_output_bytes: 256 * 1024,
            max_parallel_executions: 4,
        }
    }
}

impl Config {
    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_toml(&text)
    }

    /// Reads `path` (or the defaults) and applies `key=value` overrides.
    /// Override values are TOML literals; anything unparseable is taken as a
    /// string.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(path) => std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(format!("override {item:?} is not key=value")))?;
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.trim().to_string(), value);
        }
        Self::parse_toml(&toml::to_string(&table).map_err(|e| ConfigError::Parse(e.to_string()))?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("retrieval_top_k", self.retrieval_top_k),
            ("update_threshold", self.update_threshold),
            ("planning_candidates", self.planning_candidates),
            ("max_classification_rounds", self.max_classification_rounds as usize),
            ("embedding_dim", self.embedding_dim),
            ("workers", self.workers),
            ("max_parallel_executions", self.max_parallel_executions),
        ];
        for (name, value) in counts {
            if value < 1 {
                return Err(ConfigError::Invalid(format!("{name} must be >= 1")));
            }
        }
        if self.numeric_rel_tolerance.is_nan() || self.numeric_rel_tolerance <= 0.0 {
            return Err(ConfigError::Invalid("numeric_rel_tolerance must be > 0".into()));
        }
        if self.exec_timeout_seconds.is_nan() || self.exec_timeout_seconds <= 0.0 {
            return Err(ConfigError::Invalid("exec_timeout_seconds must be > 0".into()));
        }
        if self.request_timeout_seconds.is_nan() || self.request_timeout_seconds <= 0.0 {
            return Err(ConfigError::Invalid("request_timeout_seconds must be > 0".into()));
        }
        for (name, p) in [
            ("mock_guided_skill", self.mock_guided_skill),
            ("mock_bare_skill", self.mock_bare_skill),
            ("mock_fix_skill", self.mock_fix_skill),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("{name} must be within [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self) -> Tolerance {
        Tolerance::relative(self.numeric_rel_tolerance)
    }

    /// Flat `key = value` rendering that `parse_toml` reads back.
    pub fn to_flat_string(&self) -> String {
        toml::to_string(self).expect("config serializes as flat toml")
    }
}
