//! Prediction logs: raw per-candidate log scores from one model call per
//! sample. Every metric is re-derived from these records.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tasks::{OptionMap, Provenance, ScoredCandidate, ScoredCandidates, TaskError, TaskKind};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate record for sample `{sample_id}`, task {task}, model `{model}`, seed {seed}")]
    Duplicate {
        line: usize,
        sample_id: String,
        task: TaskKind,
        model: String,
        seed: u64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCandidate {
    pub label: String,
    /// `None` when the score is not a finite number; `reason` says why.
    pub log_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl LoggedCandidate {
    pub fn from_score(label: impl Into<String>, score: f64) -> Self {
        if score.is_finite() {
            Self {
                label: label.into(),
                log_score: Some(score),
                reason: None,
            }
        } else {
            Self {
                label: label.into(),
                log_score: None,
                reason: Some("zero_probability".into()),
            }
        }
    }

    /// Missing scores read back as `-inf`.
    pub fn score(&self) -> f64 {
        self.log_score.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLogRecord {
    pub sample_id: String,
    pub pair_id: String,
    pub task: TaskKind,
    pub model: String,
    pub seed: u64,
    pub prompt_hash: String,
    pub candidates: Vec<LoggedCandidate>,
    /// MCQ option order behind the letters A, B, C.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<OptionMap>,
    pub provenance: Provenance,
    pub timestamp: String,
}

impl PredictionLogRecord {
    pub fn key(&self) -> (&str, TaskKind, &str, u64) {
        (&self.sample_id, self.task, &self.model, self.seed)
    }

    pub fn scored(&self) -> Result<ScoredCandidates, TaskError> {
        ScoredCandidates::new(
            self.sample_id.clone(),
            self.candidates
                .iter()
                .map(|c| ScoredCandidate {
                    label: c.label.clone(),
                    log_score: c.score(),
                })
                .collect(),
            self.provenance,
        )
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub fn write_log(records: &[PredictionLogRecord], path: impl AsRef<Path>) -> Result<(), LogError> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<PredictionLogRecord>, LogError> {
    parse_log(BufReader::new(fs::File::open(path)?))
}

/// Parses JSONL records, rejecting non-finite scores and duplicate
/// (sample, task, model, seed) keys.
pub fn parse_log<R: BufRead>(reader: R) -> Result<Vec<PredictionLogRecord>, LogError> {
    let mut records: Vec<PredictionLogRecord> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: PredictionLogRecord = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        for c in &rec.candidates {
            match (c.log_score, &c.reason) {
                (Some(s), _) if !s.is_finite() => {
                    return Err(LogError::Parse {
                        line: lineno,
                        message: format!("candidate `{}` has a non-finite score", c.label),
                    })
                }
                (None, None) => {
                    return Err(LogError::Parse {
                        line: lineno,
                        message: format!("candidate `{}` has a null score without a reason", c.label),
                    })
                }
                _ => {}
            }
        }
        let key = (rec.sample_id.clone(), rec.task, rec.model.clone(), rec.seed);
        if !seen.insert(key) {
            return Err(LogError::Duplicate {
                line: lineno,
                sample_id: rec.sample_id,
                task: rec.task,
                model: rec.model,
                seed: rec.seed,
            });
        }
        records.push(rec);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(sample: &str, seed: u64, scores: &[f64]) -> PredictionLogRecord {
        PredictionLogRecord {
            sample_id: sample.into(),
            pair_id: "p".into(),
            task: TaskKind::Intrinsic,
            model: "m".into(),
            seed,
            prompt_hash: prompt_hash("x"),
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, s)| LoggedCandidate::from_score(format!("c{i}"), *s))
                .collect(),
            options: None,
            provenance: Provenance::EchoScoring,
            timestamp: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn round_trip_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let recs = vec![
            record("a", 0, &[-0.1, -2.5]),
            record("b", 0, &[-1.0, f64::NEG_INFINITY]),
        ];
        write_log(&recs, &path).unwrap();
        assert_eq!(read_log(&path).unwrap(), recs);
        assert_eq!(recs[1].scored().unwrap().candidates[1].log_score, f64::NEG_INFINITY);

        write_log(&[], &path).unwrap();
        assert!(read_log(&path).unwrap().is_empty());
    }

    #[test]
    fn duplicate_key_rejected() {
        let a = serde_json::to_string(&record("a", 0, &[-0.1, -2.5])).unwrap();
        let b = serde_json::to_string(&record("a", 1, &[-0.1, -2.5])).unwrap();
        assert_eq!(parse_log(format!("{a}\n{b}\n").as_bytes()).unwrap().len(), 2);
        let err = parse_log(format!("{a}\n{a}\n").as_bytes()).unwrap_err();
        assert!(matches!(err, LogError::Duplicate { line: 2, .. }), "{err}");
    }

    #[test]
    fn null_score_needs_reason() {
        let mut r = record("a", 0, &[-0.1, -2.5]);
        r.candidates[0].log_score = None;
        let line = serde_json::to_string(&r).unwrap();
        assert!(matches!(
            parse_log(line.as_bytes()),
            Err(LogError::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn jsonl_lossless(scores in prop::collection::vec(-50.0f64..0.0, 2..4), seed in 0u64..10) {
            let r = record("s", seed, &scores);
            let line = serde_json::to_string(&r).unwrap();
            let back = parse_log(line.as_bytes()).unwrap();
            prop_assert_eq!(back, vec![r]);
        }
    }
}
