//! Turning completion responses into candidate log scores.

use std::collections::BTreeMap;

use serde_json::{json, Value};
use ucerf_core::tasks::{Candidate, Provenance, ScoredCandidate, ScoredCandidates, TaskKind, MCQ_LETTERS};

use crate::client::Client;
use crate::{InferenceError, Result, ScoringMode};

const COMPLETIONS: &str = "completions";

/// Scores plus the latest time any contributing response was received.
#[derive(Debug, Clone)]
pub struct Scores {
    pub candidates: ScoredCandidates,
    pub stored_at: String,
}

fn malformed(msg: impl Into<String>) -> InferenceError {
    InferenceError::Malformed(msg.into())
}

fn logprobs(body: &Value) -> Result<&Value> {
    body.pointer("/choices/0/logprobs")
        .filter(|v| v.is_object())
        .ok_or_else(|| malformed("response has no choices[0].logprobs"))
}

/// The first top-logprobs map of a one-token completion.
fn first_top_logprobs(body: &Value) -> Result<BTreeMap<String, f64>> {
    let lp = logprobs(body)?;
    let tokens = lp
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("logprobs.tokens missing"))?;
    let top = lp
        .get("top_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("logprobs.top_logprobs missing"))?;
    // With echo off, the generated token is the last entry.
    let idx = tokens
        .len()
        .checked_sub(1)
        .ok_or_else(|| malformed("no generated token"))?;
    let map = top
        .get(idx)
        .and_then(Value::as_object)
        .ok_or_else(|| malformed("top_logprobs entry is not an object"))?;
    map.iter()
        .map(|(k, v)| {
            v.as_f64()
                .map(|f| (k.clone(), f))
                .ok_or_else(|| malformed(format!("top logprob for `{k}` is not a number")))
        })
        .collect()
}

fn later(a: String, b: &str) -> String {
    if b > a.as_str() {
        b.to_string()
    } else {
        a
    }
}

/// Echo mode: one request per candidate on `prompt + surface`, summing the
/// logprobs of the tokens that start at or after the end of the prompt.
pub fn score_echo(client: &Client, prompt: &str, candidates: &[Candidate]) -> Result<(Vec<f64>, String)> {
    let prompt_chars = prompt.chars().count();
    let mut scores = Vec::with_capacity(candidates.len());
    let mut stamp = String::new();
    for c in candidates {
        let full = format!("{prompt}{}", c.surface);
        let full_chars = full.chars().count();
        let body = json!({
            "model": client.config().model,
            "prompt": full,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0,
        });
        let resp = client.post(COMPLETIONS, &body)?;
        stamp = later(stamp, &resp.stored_at);
        let lp = logprobs(&resp.body)?;
        let field = |name: &str| {
            lp.get(name)
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(format!("logprobs.{name} missing")))
        };
        let (tokens, token_lps, offsets) = (field("tokens")?, field("token_logprobs")?, field("text_offset")?);
        if tokens.len() != token_lps.len() || tokens.len() != offsets.len() {
            return Err(malformed("logprobs arrays differ in length"));
        }
        let mut sum = 0.0;
        let mut covered = 0;
        for ((tok, lp), off) in tokens.iter().zip(token_lps).zip(offsets) {
            let off = off.as_u64().ok_or_else(|| malformed("text_offset is not an integer"))? as usize;
            let len = tok.as_str().map_or(0, |t| t.chars().count());
            if off >= full_chars {
                break;
            }
            if off < prompt_chars {
                if off + len > prompt_chars {
                    return Err(malformed(format!(
                        "token {tok} spans the prompt/candidate boundary for `{}`",
                        c.surface
                    )));
                }
                continue;
            }
            sum += lp
                .as_f64()
                .ok_or_else(|| malformed(format!("candidate token {tok} has no logprob")))?;
            covered += len;
        }
        if covered == 0 {
            return Err(malformed(format!("no echoed tokens cover candidate `{}`", c.surface)));
        }
        scores.push(sum);
    }
    Ok((scores, stamp))
}

/// Stepwise mode: feeds the candidate one token at a time, each time taking
/// the longest top-N token that is a prefix of what remains.
pub fn score_stepwise(client: &Client, prompt: &str, candidates: &[Candidate]) -> Result<(Vec<f64>, String)> {
    let n = client.config().top_n;
    let mut scores = Vec::with_capacity(candidates.len());
    let mut stamp = String::new();
    for c in candidates {
        let mut context = prompt.to_string();
        let mut remaining = c.surface.as_str();
        let mut sum = 0.0;
        let mut step = 0;
        while !remaining.is_empty() {
            let body = json!({
                "model": client.config().model,
                "prompt": context,
                "max_tokens": 1,
                "logprobs": n,
                "temperature": 0,
            });
            let resp = client.post(COMPLETIONS, &body)?;
            stamp = later(stamp, &resp.stored_at);
            let top = first_top_logprobs(&resp.body)?;
            let best = top
                .iter()
                .filter(|(t, _)| !t.is_empty() && remaining.starts_with(t.as_str()))
                .max_by_key(|(t, _)| t.len())
                .ok_or_else(|| InferenceError::NotInTopN {
                    remaining: remaining.to_string(),
                    n,
                    step,
                })?;
            sum += best.1;
            context.push_str(best.0);
            remaining = &remaining[best.0.len()..];
            step += 1;
        }
        scores.push(sum);
    }
    Ok((scores, stamp))
}

fn next_token_map(client: &Client, prompt: &str) -> Result<(BTreeMap<String, f64>, String)> {
    let body = json!({
        "model": client.config().model,
        "prompt": prompt,
        "max_tokens": 1,
        "logprobs": client.config().top_n,
        "temperature": 0,
    });
    let resp = client.post(COMPLETIONS, &body)?;
    Ok((first_top_logprobs(&resp.body)?, resp.stored_at))
}

/// Next-token mode for single-token candidates: each candidate's surface
/// must appear verbatim in the top-N list of the first generated position.
pub fn score_next_token(client: &Client, prompt: &str, candidates: &[Candidate]) -> Result<(Vec<f64>, String)> {
    let (top, stamp) = next_token_map(client, prompt)?;
    let scores = candidates
        .iter()
        .map(|c| {
            top.get(&c.surface).copied().ok_or_else(|| InferenceError::NotInTopN {
                remaining: c.surface.clone(),
                n: client.config().top_n,
                step: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scores, stamp))
}

/// `log(sum exp(x))`, exact for a single term.
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Letter scores from a top-N map: for each letter the probabilities of
/// `"A"` and `" A"` (when present) are added before taking the log.
pub fn letter_scores_from_top(top: &BTreeMap<String, f64>, n: usize) -> Result<Vec<ScoredCandidate>> {
    let mut any = false;
    let out = MCQ_LETTERS
        .iter()
        .map(|l| {
            let variants: Vec<f64> = [l.to_string(), format!(" {l}")]
                .iter()
                .filter_map(|v| top.get(v).copied())
                .collect();
            any |= !variants.is_empty();
            ScoredCandidate {
                label: l.to_string(),
                log_score: log_sum_exp(&variants),
            }
        })
        .collect();
    if !any {
        return Err(InferenceError::LettersMissing(n));
    }
    Ok(out)
}

pub fn mcq_letter_scores(client: &Client, prompt: &str) -> Result<(Vec<ScoredCandidate>, String)> {
    let (top, stamp) = next_token_map(client, prompt)?;
    Ok((letter_scores_from_top(&top, client.config().top_n)?, stamp))
}

/// Scores one prompt's candidates. MCQ always reads the next-token letter
/// distribution; the intrinsic task follows the configured mode, falling
/// back from echo to stepwise when the endpoint rejects echo requests.
pub fn score_candidates(
    client: &Client,
    sample_id: &str,
    prompt: &str,
    candidates: &[Candidate],
    kind: TaskKind,
) -> Result<Scores> {
    let (scored, provenance, stored_at) = match kind {
        TaskKind::Mcq => {
            let (s, t) = mcq_letter_scores(client, prompt)?;
            (s, Provenance::NextToken, t)
        }
        TaskKind::Intrinsic => {
            let (scores, provenance, t) = match client.config().mode {
                ScoringMode::Echo => match score_echo(client, prompt, candidates) {
                    Ok((s, t)) => (s, Provenance::EchoScoring, t),
                    Err(e) if e.is_client_rejection() => {
                        log::warn!("echo scoring rejected ({e}); falling back to stepwise for `{sample_id}`");
                        let (s, t) = score_stepwise(client, prompt, candidates)?;
                        (s, Provenance::StepwiseFallback, t)
                    }
                    Err(e) => return Err(e),
                },
                ScoringMode::Stepwise => {
                    let (s, t) = score_stepwise(client, prompt, candidates)?;
                    (s, Provenance::Stepwise, t)
                }
                ScoringMode::NextToken => {
                    let (s, t) = score_next_token(client, prompt, candidates)?;
                    (s, Provenance::NextToken, t)
                }
            };
            let scored = candidates
                .iter()
                .zip(scores)
                .map(|(c, s)| ScoredCandidate {
                    label: c.label.clone(),
                    log_score: s,
                })
                .collect();
            (scored, provenance, t)
        }
    };
    Ok(Scores {
        candidates: ScoredCandidates::new(sample_id, scored, provenance)?,
        stored_at,
    })
}
