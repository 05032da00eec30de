//! A deterministic OpenAI-compatible server for tests and offline demos.
//!
//! Logits are pseudo-random but fixed: the logit of `token` after `context`
//! is derived from `sha256(model, context, token)` and mapped to [-4, 4),
//! then shifted by any matching [`BiasRule`]. Log probabilities normalize
//! over the fixture vocabulary. Text is split with the pattern
//! `\s*[A-Za-z0-9]+|\s*[^\sA-Za-z0-9]`, so a token carries its leading
//! whitespace and trailing whitespace at the end of a prompt is dropped.
//!
//! `/v1/completions` honours `prompt`, `echo`, `max_tokens` and `logprobs`
//! (top-N size) and reports `tokens`, `token_logprobs`, `top_logprobs` and
//! `text_offset` (character offsets). `/v1/chat/completions` answers with the
//! first [`ChatRule`] whose `contains` text occurs in the last message.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;
use ucerf_core::corpus::Registry;

/// Adds `delta` to the logit of `token` whenever the context contains
/// `context_contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRule {
    pub context_contains: String,
    pub token: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    pub contains: String,
    pub response: String,
}

/// Server behaviour. Serialized as JSON for fixture files; every field is
/// optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MockFixture {
    /// Vocabulary; empty means [`default_vocab`].
    pub vocab: Vec<String>,
    pub extra_vocab: Vec<String>,
    pub bias: Vec<BiasRule>,
    pub chat: Vec<ChatRule>,
    /// Answer the first `fail_first` requests with HTTP 503.
    pub fail_first: usize,
    /// Answer echo requests with HTTP 400.
    pub reject_echo: bool,
}

/// Common words, punctuation, option letters and every word of the default
/// occupation registry, each with a leading space.
pub fn default_vocab() -> Vec<String> {
    let mut v: BTreeSet<String> = [
        "The", " the", " a", " an", " he", " she", " his", " her", " him", " and", " to", " of", " was", " is",
        " because", " with", " for", " that", " it", " in", " on", " None", " above", " refers", " pronoun", " Answer",
        ".", ",", ":", "?", "!", "A", "B", "C", " A", " B", " C", "\n",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for name in Registry::bls_default().names() {
        for w in name.split_whitespace() {
            v.insert(format!(" {}", w.to_lowercase()));
        }
    }
    v.into_iter().collect()
}

fn token_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*[A-Za-z0-9]+|\s*[^\sA-Za-z0-9]").expect("valid token pattern"))
}

/// Tokens with their starting character offsets.
pub fn tokenize(text: &str) -> Vec<(usize, String)> {
    token_pattern()
        .find_iter(text)
        .map(|m| (text[..m.start()].chars().count(), m.as_str().to_string()))
        .collect()
}

struct Model {
    vocab: Vec<String>,
    bias: Vec<BiasRule>,
}

impl Model {
    fn new(fixture: &MockFixture) -> Self {
        let mut vocab: BTreeSet<String> = if fixture.vocab.is_empty() {
            default_vocab().into_iter().collect()
        } else {
            fixture.vocab.iter().cloned().collect()
        };
        vocab.extend(fixture.extra_vocab.iter().cloned());
        Self {
            vocab: vocab.into_iter().collect(),
            bias: fixture.bias.clone(),
        }
    }

    fn logit(&self, model: &str, context: &str, token: &str) -> f64 {
        let mut h = Sha256::new();
        for part in [model, context, token] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let d = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&d[..8]);
        let u = u64::from_be_bytes(b) as f64 / 18446744073709551616.0;
        let bias: f64 = self
            .bias
            .iter()
            .filter(|r| r.token == token && context.contains(&r.context_contains))
            .map(|r| r.delta)
            .sum();
        8.0 * (u - 0.5) + bias
    }

    /// Log-normalizer over the vocabulary at `context`, and the vocabulary
    /// log probabilities.
    fn distribution(&self, model: &str, context: &str) -> (f64, Vec<f64>) {
        let logits: Vec<f64> = self.vocab.iter().map(|t| self.logit(model, context, t)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        (z, logits.into_iter().map(|l| l - z).collect())
    }

    fn top(&self, lps: &[f64], n: usize) -> Map<String, Value> {
        let mut idx: Vec<usize> = (0..lps.len()).collect();
        idx.sort_by(|&a, &b| {
            lps[b]
                .total_cmp(&lps[a])
                .then_with(|| self.vocab[a].cmp(&self.vocab[b]))
        });
        idx.into_iter()
            .take(n)
            .map(|i| (self.vocab[i].clone(), json!(lps[i])))
            .collect()
    }
}

struct MockState {
    model: Model,
    fixture: MockFixture,
    calls: Arc<AtomicUsize>,
    failures_left: AtomicUsize,
}

fn error(status: StatusCode, message: &str) -> Response {
    (status, Json(json!({"error": {"message": message}}))).into_response()
}

fn admit(state: &MockState) -> Option<Response> {
    state.calls.fetch_add(1, Ordering::SeqCst);
    let took = state
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    took.then(|| error(StatusCode::SERVICE_UNAVAILABLE, "injected failure"))
}

async fn completions(State(state): State<Arc<MockState>>, Json(req): Json<Value>) -> Response {
    if let Some(r) = admit(&state) {
        return r;
    }
    let model = req.get("model").and_then(Value::as_str).unwrap_or("mock").to_string();
    let prompt = match req.get("prompt") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(a)) if a.len() == 1 && a[0].is_string() => a[0].as_str().unwrap_or_default().to_string(),
        _ => return error(StatusCode::BAD_REQUEST, "prompt must be a string"),
    };
    let echo = req.get("echo").and_then(Value::as_bool).unwrap_or(false);
    if echo && state.fixture.reject_echo {
        return error(StatusCode::BAD_REQUEST, "echo is not supported");
    }
    let max_tokens = req.get("max_tokens").and_then(Value::as_u64).unwrap_or(16) as usize;
    let top_n = req.get("logprobs").and_then(Value::as_u64).map(|n| n as usize);
    let m = &state.model;

    let mut tokens = Vec::new();
    let mut token_lps = Vec::new();
    let mut tops = Vec::new();
    let mut offsets = Vec::new();
    if echo {
        for (i, (off, tok)) in tokenize(&prompt).into_iter().enumerate() {
            if i == 0 {
                token_lps.push(Value::Null);
                tops.push(Value::Null);
            } else {
                let context: String = prompt.chars().take(off).collect();
                let (z, lps) = m.distribution(&model, &context);
                token_lps.push(json!(m.logit(&model, &context, &tok) - z));
                tops.push(Value::Object(m.top(&lps, top_n.unwrap_or(0))));
            }
            tokens.push(tok);
            offsets.push(off);
        }
    }
    let mut text = prompt.clone();
    let mut generated = String::new();
    for _ in 0..max_tokens {
        let (_, lps) = m.distribution(&model, &text);
        let best = (0..lps.len())
            .max_by(|&a, &b| lps[a].total_cmp(&lps[b]).then_with(|| m.vocab[b].cmp(&m.vocab[a])))
            .expect("non-empty vocabulary");
        let tok = m.vocab[best].clone();
        offsets.push(text.chars().count());
        token_lps.push(json!(lps[best]));
        tops.push(Value::Object(m.top(&lps, top_n.unwrap_or(0))));
        text.push_str(&tok);
        generated.push_str(&tok);
        tokens.push(tok);
    }
    let logprobs = match top_n {
        Some(_) => json!({
            "tokens": tokens,
            "token_logprobs": token_lps,
            "top_logprobs": tops,
            "text_offset": offsets,
        }),
        None => Value::Null,
    };
    Json(json!({
        "id": "mock-cmpl",
        "object": "text_completion",
        "created": 0,
        "model": model,
        "choices": [{
            "index": 0,
            "text": if echo { text } else { generated },
            "logprobs": logprobs,
            "finish_reason": "length",
        }],
    }))
    .into_response()
}

async fn chat(State(state): State<Arc<MockState>>, Json(req): Json<Value>) -> Response {
    if let Some(r) = admit(&state) {
        return r;
    }
    let last = req
        .get("messages")
        .and_then(Value::as_array)
        .and_then(|m| m.last())
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .unwrap_or_default();
    let content = state
        .fixture
        .chat
        .iter()
        .find(|r| last.contains(&r.contains))
        .map(|r| r.response.clone())
        .unwrap_or_default();
    Json(json!({
        "id": "mock-chat",
        "object": "chat.completion",
        "created": 0,
        "model": req.get("model").cloned().unwrap_or(Value::Null),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
    }))
    .into_response()
}

/// A running mock server; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    calls: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(fixture: MockFixture) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let calls = Arc::new(AtomicUsize::new(0));
        let state = Arc::new(MockState {
            model: Model::new(&fixture),
            failures_left: AtomicUsize::new(fixture.fail_first),
            fixture,
            calls: calls.clone(),
        });
        let app = Router::new()
            .route("/v1/completions", post(completions))
            .route("/v1/chat/completions", post(chat))
            .with_state(state);
        let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            calls,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    /// Base URL including `/v1`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Requests received so far, including injected failures.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_keeps_leading_space() {
        let t = tokenize("The nurse, he said. ");
        let toks: Vec<&str> = t.iter().map(|(_, s)| s.as_str()).collect();
        assert_eq!(toks, ["The", " nurse", ",", " he", " said", "."]);
        assert_eq!(t[1].0, 3);
    }

    #[test]
    fn distribution_normalizes() {
        let m = Model::new(&MockFixture::default());
        let (_, lps) = m.distribution("m", "ctx");
        let total: f64 = lps.iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
