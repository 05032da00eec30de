//! Intrinsic and multiple-choice task construction and judging.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Sample, TaskType};
use crate::metrics::{desirability, Correctness, Desirability, Outcome, NONE_OF_THE_ABOVE};
use crate::uncertainty::{
    class_perplexity, normalized_certainty, CertaintyEstimator, ClassDistribution, DistributionError,
};

/// Suffix appended to the sentence in the intrinsic task.
pub const INTRINSIC_TEMPLATE: &str = "{sentence} The pronoun {pronoun} refers to the";

/// Multiple-choice layout: no space after each newline, one trailing space
/// after `Answer:`.
pub const MCQ_TEMPLATE: &str = "Choose the right option for the question using the context below.\n\
{sentence} The pronoun {pronoun} refers to\n\
A.{optionA}\n\
B.{optionB}\n\
C.{optionC}\n\
Answer: ";

pub const MCQ_LETTERS: [&str; 3] = ["A", "B", "C"];

/// Probabilities whose difference is below this are treated as a tie.
pub const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("template is missing placeholder {0}")]
    MissingPlaceholder(&'static str),
    #[error("every candidate score is -inf")]
    AllScoresInfinite,
    #[error("log score {0} for `{1}` is not usable")]
    InvalidScore(f64, String),
    #[error("a scored candidate set needs at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("gold `{0}` is not among the candidates")]
    GoldNotCandidate(String),
    #[error("distribution labels do not match the task candidates")]
    CandidateMismatch,
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

pub type Result<T> = std::result::Result<T, TaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Intrinsic,
    Mcq,
}

impl TaskKind {
    /// Number of possible predicted outcomes.
    pub fn k(self) -> usize {
        match self {
            TaskKind::Intrinsic => 2,
            TaskKind::Mcq => 3,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Intrinsic => "intrinsic",
            TaskKind::Mcq => "mcq",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "intrinsic" => Ok(TaskKind::Intrinsic),
            "mcq" => Ok(TaskKind::Mcq),
            other => Err(format!("unknown task `{other}` (expected intrinsic or mcq)")),
        }
    }
}

/// A prompt template with `{sentence}`, `{pronoun}` and, for MCQ,
/// `{optionA}`..`{optionC}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TaskKind,
    text: String,
}

impl PromptTemplate {
    pub fn new(kind: TaskKind, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let required: &[&'static str] = match kind {
            TaskKind::Intrinsic => &["{sentence}", "{pronoun}"],
            TaskKind::Mcq => &["{sentence}", "{pronoun}", "{optionA}", "{optionB}", "{optionC}"],
        };
        for p in required {
            if !text.contains(p) {
                return Err(TaskError::MissingPlaceholder(p));
            }
        }
        Ok(Self { kind, text })
    }

    pub fn default_for(kind: TaskKind) -> Self {
        let text = match kind {
            TaskKind::Intrinsic => INTRINSIC_TEMPLATE,
            TaskKind::Mcq => MCQ_TEMPLATE,
        };
        Self {
            kind,
            text: text.to_string(),
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn render(&self, sample: &Sample, options: Option<&OptionMap>) -> String {
        let pronoun = sample.pronoun.surface.to_ascii_lowercase();
        // substitute the sentence last so that braces inside it are left alone
        let mut out = self.text.replace("{pronoun}", &pronoun);
        if let Some(map) = options {
            for (slot, target) in ["{optionA}", "{optionB}", "{optionC}"].iter().zip(&map.targets) {
                out = out.replace(slot, target.as_str());
            }
        }
        out.replace("{sentence}", &sample.text)
    }
}

/// Task configuration for one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seed: u64,
    pub template: PromptTemplate,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            template: PromptTemplate::default_for(kind),
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    /// Builds the prompt, and for MCQ the option order used for it.
    pub fn prompt(&self, sample: &Sample) -> (String, Option<OptionMap>) {
        match self.kind {
            TaskKind::Intrinsic => (self.template.render(sample, None), None),
            TaskKind::Mcq => {
                let map = option_order(sample, self.seed);
                (self.template.render(sample, Some(&map)), Some(map))
            }
        }
    }
}

/// `<sentence> The pronoun <pronoun> refers to the`
pub fn build_intrinsic_prompt(sample: &Sample) -> String {
    PromptTemplate::default_for(TaskKind::Intrinsic).render(sample, None)
}

/// The multiple-choice prompt and its letter-to-option mapping.
pub fn build_mcq_prompt(sample: &Sample, seed: u64) -> (String, OptionMap) {
    let map = option_order(sample, seed);
    (
        PromptTemplate::default_for(TaskKind::Mcq).render(sample, Some(&map)),
        map,
    )
}

/// Options behind the letters A, B, C, in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OptionMap {
    pub targets: Vec<String>,
}

impl OptionMap {
    pub fn target_of(&self, letter: &str) -> Option<&str> {
        MCQ_LETTERS
            .iter()
            .position(|l| *l == letter)
            .and_then(|i| self.targets.get(i))
            .map(String::as_str)
    }

    pub fn letter_of(&self, target: &str) -> Option<&'static str> {
        self.targets.iter().position(|t| t == target).map(|i| MCQ_LETTERS[i])
    }
}

/// Seeded shuffle of the two occupations and "None of the above", keyed by
/// `pair_id` so both variants of a pair see the same order.
pub fn option_order(sample: &Sample, seed: u64) -> OptionMap {
    let mut h = Sha256::new();
    h.update(sample.pair_id.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut targets = vec![
        sample.occupations[0].name.clone(),
        sample.occupations[1].name.clone(),
        NONE_OF_THE_ABOVE.to_string(),
    ];
    targets.shuffle(&mut rng);
    OptionMap { targets }
}

/// A candidate label and the text scored as its continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub surface: String,
}

/// Candidate answers: the two occupations for the intrinsic task (scored as
/// `" " + name`), the letters A, B, C for MCQ.
pub fn candidate_set(sample: &Sample, kind: TaskKind) -> Vec<Candidate> {
    match kind {
        TaskKind::Intrinsic => sample
            .occupations
            .iter()
            .map(|o| Candidate {
                label: o.name.clone(),
                surface: format!(" {}", o.name.to_lowercase()),
            })
            .collect(),
        TaskKind::Mcq => MCQ_LETTERS
            .iter()
            .map(|l| Candidate {
                label: l.to_string(),
                surface: l.to_string(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    EchoScoring,
    Stepwise,
    /// Stepwise scoring used because the endpoint refused echo requests.
    StepwiseFallback,
    NextToken,
    LocalAdapter,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::EchoScoring => "echo_scoring",
            Provenance::Stepwise => "stepwise",
            Provenance::StepwiseFallback => "stepwise_fallback",
            Provenance::NextToken => "next_token",
            Provenance::LocalAdapter => "local_adapter",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub label: String,
    /// Log probability; `-inf` means the candidate has zero probability.
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidates {
    pub sample_id: String,
    pub candidates: Vec<ScoredCandidate>,
    pub provenance: Provenance,
}

impl ScoredCandidates {
    pub fn new(sample_id: impl Into<String>, candidates: Vec<ScoredCandidate>, provenance: Provenance) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(TaskError::TooFewCandidates(candidates.len()));
        }
        for c in &candidates {
            if c.log_score.is_nan() || c.log_score == f64::INFINITY {
                return Err(TaskError::InvalidScore(c.log_score, c.label.clone()));
            }
        }
        Ok(Self {
            sample_id: sample_id.into(),
            candidates,
            provenance,
        })
    }
}

/// Renormalizes log scores over the candidates: `p_j = exp(s_j) / sum exp(s_l)`.
pub fn to_distribution(scored: &ScoredCandidates) -> Result<ClassDistribution> {
    let max = scored
        .candidates
        .iter()
        .map(|c| c.log_score)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(TaskError::AllScoresInfinite);
    }
    let weights: Vec<f64> = scored.candidates.iter().map(|c| (c.log_score - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let labels = scored.candidates.iter().map(|c| c.label.clone()).collect();
    Ok(ClassDistribution::new(
        labels,
        weights.into_iter().map(|w| w / total).collect(),
    )?)
}

/// Highest-probability label; ties within [`TIE_EPSILON`] go to the
/// lexicographically smaller label. Returns the label and whether a tie occurred.
pub fn argmax(dist: &ClassDistribution) -> (&str, bool) {
    let max = dist.probs().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<&str> = None;
    let mut count = 0;
    for (l, &p) in dist.labels().iter().zip(dist.probs()) {
        if max - p <= TIE_EPSILON {
            count += 1;
            if best.is_none_or(|b| l.as_str() < b) {
                best = Some(l);
            }
        }
    }
    (best.expect("distribution has at least two classes"), count > 1)
}

/// Judges one prediction: picks the argmax, maps MCQ letters back to their
/// options, and scores correctness, certainty and desirability.
pub fn judge(
    sample: &Sample,
    dist: &ClassDistribution,
    kind: TaskKind,
    options: Option<&OptionMap>,
    estimator: CertaintyEstimator,
) -> Result<Outcome> {
    let expected: Vec<String> = candidate_set(sample, kind).into_iter().map(|c| c.label).collect();
    if dist.labels() != expected.as_slice() {
        return Err(TaskError::CandidateMismatch);
    }
    let (label, tied) = argmax(dist);
    let predicted = match (kind, options) {
        (TaskKind::Mcq, Some(map)) => map.target_of(label).ok_or(TaskError::CandidateMismatch)?.to_string(),
        (TaskKind::Mcq, None) => return Err(TaskError::CandidateMismatch),
        (TaskKind::Intrinsic, _) => label.to_string(),
    };
    let correctness = match (&sample.gold, sample.task_type) {
        (Some(gold), TaskType::Type2Unambiguous) => {
            let known = match (kind, options) {
                (TaskKind::Mcq, Some(map)) => map.letter_of(gold).is_some(),
                _ => expected.iter().any(|l| l == gold),
            };
            if !known {
                return Err(TaskError::GoldNotCandidate(gold.clone()));
            }
            if predicted == *gold {
                Correctness::Correct
            } else {
                Correctness::Incorrect
            }
        }
        _ => Correctness::NoGold,
    };
    let certainty = normalized_certainty(dist, estimator);
    let d: Desirability = desirability(certainty, correctness);
    Ok(Outcome {
        sample_id: sample.id.clone(),
        pair_id: sample.pair_id.clone(),
        group: sample.group,
        task_type: sample.task_type,
        pronoun_gender: sample.pronoun.gender,
        occupations: [sample.occupations[0].name.clone(), sample.occupations[1].name.clone()],
        gold: sample.gold.clone(),
        predicted,
        correctness,
        certainty,
        perplexity: class_perplexity(dist),
        k: dist.k(),
        desirability: d,
        tied,
    })
}
