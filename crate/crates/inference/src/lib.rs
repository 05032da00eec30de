//! Candidate scoring against OpenAI-compatible `/v1/completions` endpoints.
//!
//! A [`Client`] issues cached, retried requests. The scoring functions in
//! [`scoring`] turn responses into per-candidate log scores, and
//! [`runner::score_dataset`] produces prediction-log records for a whole
//! dataset with bounded parallelism. [`mock`] serves deterministic
//! pseudo-logits for tests and offline demos.

pub mod cache;
pub mod client;
pub mod mock;
pub mod runner;
pub mod scoring;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use ucerf_core::tasks::TaskError;

pub use cache::ResponseCache;
pub use client::Client;

/// Most hosted endpoints cap `logprobs` at 20.
pub const DEFAULT_TOP_N: usize = 20;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("{url}: HTTP {status}: {body}")]
    Http { url: String, status: u16, body: String },
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error(
        "no token among the top {n} at step {step} is a prefix of `{remaining}`; \
         raise the top-N setting or use echo mode"
    )]
    NotInTopN { remaining: String, n: usize, step: usize },
    #[error("none of the letters A, B, C appear among the top {0} tokens")]
    LettersMissing(usize),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error(transparent)]
    Task(#[from] TaskError),
}

impl InferenceError {
    /// Client-side rejections that a different request shape might avoid.
    pub fn is_client_rejection(&self) -> bool {
        matches!(self, InferenceError::Http { status, .. } if (400..500).contains(status) && *status != 429)
    }
}

pub type Result<T> = std::result::Result<T, InferenceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// One echo request per candidate; sums the candidate's token logprobs.
    Echo,
    /// Teacher-forced one-token requests reading the top-N list.
    Stepwise,
    /// A single request reading the first generated position.
    NextToken,
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringMode::Echo => "echo",
            ScoringMode::Stepwise => "stepwise",
            ScoringMode::NextToken => "next_token",
        })
    }
}

impl FromStr for ScoringMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "echo" => Ok(ScoringMode::Echo),
            "stepwise" => Ok(ScoringMode::Stepwise),
            "next_token" | "next_token_only" | "next-token" => Ok(ScoringMode::NextToken),
            other => Err(format!("unknown scoring mode `{other}` (echo, stepwise, next_token)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL including the version prefix, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub concurrency: usize,
    pub mode: ScoringMode,
    pub top_n: usize,
    /// Base delay for exponential backoff.
    pub retry_base_ms: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 4,
            concurrency: 4,
            mode: ScoringMode::Echo,
            top_n: DEFAULT_TOP_N,
            retry_base_ms: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(InferenceError::Config("base_url is empty".into()));
        }
        if self.model.trim().is_empty() {
            return Err(InferenceError::Config("model is empty".into()));
        }
        if self.concurrency == 0 {
            return Err(InferenceError::Config("concurrency must be at least 1".into()));
        }
        if self.top_n == 0 {
            return Err(InferenceError::Config("top_n must be at least 1".into()));
        }
        Ok(())
    }

    pub fn url(&self, path: &str) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            path.trim_start_matches('/')
        )
    }
}
