//! Chat-completions and embeddings over HTTP.
//!
//! Request shapes:
//! `POST {endpoint}/chat/completions` with `{model, messages, temperature, max_tokens}`
//! reading `choices[0].message.content`, and
//! `POST {endpoint}/embeddings` with `{model, input}` reading `data[0].embedding`.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, ChatRequest, EmbedBackend, ProviderError};
use crate::config::Config;

/// Per-endpoint token bucket (capacity one second of tokens).
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_second: f64) -> Self {
        Self {
            per_second,
            state: Mutex::new((per_second.max(1.0), Instant::now())),
        }
    }

    pub fn acquire(&self) {
        if self.per_second <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut guard = self.state.lock().expect("rate limiter lock");
                let (tokens, last) = &mut *guard;
                let now = Instant::now();
                let capacity = self.per_second.max(1.0);
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second).min(capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                (1.0 - *tokens) / self.per_second
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[derive(Debug)]
struct Transport {
    client: Client,
    url: String,
    api_key: Option<String>,
    retries: u32,
    limiter: RateLimiter,
    log_bodies: bool,
}

impl Transport {
    fn new(config: &Config, endpoint: &str, path: &str) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_seconds))
            .build()
            .map_err(|e| ProviderError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            url: format!("{}/{}", endpoint.trim_end_matches('/'), path),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            retries: config.retries,
            limiter: RateLimiter::new(config.rate_limit_per_second),
            log_bodies: config.verbose_trace,
        })
    }

    fn post(&self, body: &serde_json::Value) -> Result<String, ProviderError> {
        let mut last_error = String::new();
        let attempts = self.retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(100 << attempt.min(6)));
            }
            self.limiter.acquire();
            if self.log_bodies {
                tracing::trace!(url = %self.url, request = %body, "http request");
            }
            let mut req = self.client.post(&self.url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if self.log_bodies {
                        tracing::trace!(url = %self.url, %status, response = %text, "http response");
                    }
                    if status.is_success() {
                        return Ok(text);
                    }
                    last_error = format!("HTTP {status}: {}", truncate(&text, 300));
                    if status.is_client_error() && status.as_u16() != 429 {
                        return Err(ProviderError::Transport {
                            attempts: attempt + 1,
                            message: last_error,
                        });
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(ProviderError::Transport {
            attempts,
            message: last_error,
        })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

#[derive(Debug)]
pub struct HttpChatBackend {
    transport: Transport,
    model: String,
    temperature: f64,
    max_tokens: u32,
}

impl HttpChatBackend {
    pub fn from_config(config: &Config) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: Transport::new(config, &config.chat_endpoint, "chat/completions")?,
            model: config.chat_model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let text = self.transport.post(&body)?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(ProviderError::EmptyCompletion);
        }
        Ok(content)
    }
}

#[derive(Debug)]
pub struct HttpEmbedBackend {
    transport: Transport,
    model: String,
}

impl HttpEmbedBackend {
    pub fn from_config(config: &Config) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: Transport::new(config, &config.embed_endpoint, "embeddings")?,
            model: config.embed_model.clone(),
        })
    }
}

impl EmbedBackend for HttpEmbedBackend {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = json!({ "model": self.model, "input": text });
        let raw = self.transport.post(&body)?;
        let parsed: EmbeddingResponse =
            serde_json::from_str(&raw).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ProviderError::BadResponse("no embedding in response".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_disabled_is_free() {
        let l = RateLimiter::new(0.0);
        let t = Instant::now();
        for _ in 0..1000 {
            l.acquire();
        }
        assert!(t.elapsed() < Duration::from_millis(100));
    }

    #[test]
    fn limiter_spaces_requests() {
        let l = RateLimiter::new(20.0);
        let t = Instant::now();
        for _ in 0..30 {
            l.acquire();
        }
        // 20 burst tokens, then 10 more at 20/s
        assert!(t.elapsed() >= Duration::from_millis(400));
    }
}
