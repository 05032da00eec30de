//! Blocking HTTP client with retries and an optional response cache.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rand::Rng;
use serde_json::Value;

use crate::cache::ResponseCache;
use crate::{EndpointConfig, InferenceError, Result};

/// A parsed response and the time it was first received.
#[derive(Debug, Clone)]
pub struct Response {
    pub body: Value,
    pub stored_at: String,
}

pub struct Client {
    config: EndpointConfig,
    http: reqwest::blocking::Client,
    cache: Option<ResponseCache>,
    api_key: Option<String>,
    network_calls: AtomicUsize,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Client {
    pub fn new(config: EndpointConfig, cache: Option<ResponseCache>) -> Result<Self> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| InferenceError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| InferenceError::Config(e.to_string()))?;
        Ok(Self {
            config,
            http,
            cache,
            api_key,
            network_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Requests that reached the network (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// POSTs `body` to `path` under the base URL, consulting the cache first.
    pub fn post(&self, path: &str, body: &Value) -> Result<Response> {
        let body_text = serde_json::to_string(body).map_err(|e| InferenceError::Malformed(e.to_string()))?;
        let key = ResponseCache::key(&self.config.base_url, &self.config.model, path, &body_text);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            if let Ok(body) = serde_json::from_str(&hit.response) {
                return Ok(Response {
                    body,
                    stored_at: hit.stored_at,
                });
            }
            log::warn!("cached response for {path} is not JSON; refetching");
        }
        let text = self.send_with_retries(path, body_text)?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| InferenceError::Malformed(format!("{path}: response is not JSON: {e}")))?;
        let mut stored_at = now_rfc3339();
        if let Some(c) = &self.cache {
            let kept = c.put(&key, &text, &stored_at)?;
            if kept.response != text {
                // another worker stored this request first; its copy is canonical
                let body = serde_json::from_str(&kept.response)
                    .map_err(|e| InferenceError::Malformed(format!("{path}: cached response is not JSON: {e}")))?;
                return Ok(Response {
                    body,
                    stored_at: kept.stored_at,
                });
            }
            stored_at = kept.stored_at;
        }
        Ok(Response {
            body: parsed,
            stored_at,
        })
    }

    fn send_with_retries(&self, path: &str, body: String) -> Result<String> {
        let url = self.config.url(path);
        let mut attempt = 0u32;
        loop {
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self
                .http
                .post(&url)
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(body.clone());
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let err = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| InferenceError::Transport {
                        url: url.clone(),
                        message: e.to_string(),
                    })?;
                    if status.is_success() {
                        return Ok(text);
                    }
                    InferenceError::Http {
                        url: url.clone(),
                        status: status.as_u16(),
                        body: text.chars().take(500).collect(),
                    }
                }
                Err(e) => InferenceError::Transport {
                    url: url.clone(),
                    message: e.to_string(),
                },
            };
            let retryable = match &err {
                InferenceError::Http { status, .. } => *status == 429 || *status >= 500,
                _ => true,
            };
            if !retryable || attempt >= self.config.max_retries {
                return Err(err);
            }
            let base = self.config.retry_base_ms.saturating_mul(1 << attempt.min(16));
            let jitter = if self.config.retry_base_ms > 0 {
                rand::rng().random_range(0..self.config.retry_base_ms)
            } else {
                0
            };
            log::warn!("{err}; retrying in {} ms", base + jitter);
            std::thread::sleep(Duration::from_millis(base + jitter));
            attempt += 1;
        }
    }

    /// Single-turn chat completion returning the assistant message text.
    pub fn chat(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let resp = self.post("chat/completions", &body)?;
        resp.body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| InferenceError::Malformed("chat response has no message content".into()))
    }
}

impl ucerf_core::pipeline::ChatBackend for Client {
    fn chat(&self, prompt: &str) -> std::result::Result<String, String> {
        Client::chat(self, prompt).map_err(|e| e.to_string())
    }
}
