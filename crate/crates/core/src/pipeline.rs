//! Dataset construction and validation: generation prompts, response
//! parsing, rule filters, pronoun swapping, annotation consensus and
//! diversity statistics.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    find_occupation_mentions, find_pronouns, is_admissible_pair, label_group, pair_key, strip_brackets, word_spans,
    CorpusError, Gender, Group, Pronoun, Registry, Sample, Span, TaskType, DEFAULT_ATTRIBUTE,
};
use crate::numeric::{mean, population_std, CompensatedSum};

pub const GENERATION_PROMPT_TYPE1: &str = include_str!("../assets/generation_type1.txt");
pub const GENERATION_PROMPT_TYPE2: &str = include_str!("../assets/generation_type2.txt");

/// Stereotype gap (percentage points) below which a pair is not generated.
pub const DEFAULT_PAIR_GAP: f64 = 10.0;
pub const DEFAULT_MAX_WORD_DIFF: usize = 2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("chat backend failed: {0}")]
    Backend(String),
    #[error("response contains no numbered list")]
    NoNumberedList,
    #[error("occupation pair ({0}, {1}) is not admissible")]
    Inadmissible(String, String),
    #[error("pronoun `{0}` has no swap rule")]
    Unswappable(String),
    #[error("annotations line {line}: {message}")]
    Annotation { line: usize, message: String },
    #[error("embeddings: {0}")]
    Embedding(String),
    #[error("{0}")]
    Statistics(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

// ---------------------------------------------------------------------------
// Generation

/// Anything that can answer a single-turn chat prompt.
pub trait ChatBackend {
    fn chat(&self, prompt: &str) -> std::result::Result<String, String>;
}

pub fn generation_prompt(task_type: TaskType, target_occ: &str, other_occ: &str) -> String {
    let template = match task_type {
        TaskType::Type1Ambiguous => GENERATION_PROMPT_TYPE1,
        TaskType::Type2Unambiguous => GENERATION_PROMPT_TYPE2,
    };
    template
        .replace("{target_occ}", target_occ)
        .replace("{other_occ}", other_occ)
}

/// One numbered line of a generation response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub number: usize,
    /// The sentence as generated, square brackets included.
    pub raw: String,
}

/// Parses lines of the form `12. sentence` or `12) sentence`; other lines
/// are ignored.
pub fn parse_numbered_list(response: &str) -> Result<Vec<RawCandidate>> {
    let mut out = Vec::new();
    for line in response.lines() {
        let t = line.trim_start();
        let digits = t.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            continue;
        }
        let rest = &t[digits..];
        let Some(after) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        if !after.starts_with(char::is_whitespace) {
            continue;
        }
        let sentence = after.trim();
        if sentence.is_empty() {
            continue;
        }
        out.push(RawCandidate {
            number: t[..digits].parse().unwrap_or(0),
            raw: sentence.to_string(),
        });
    }
    if out.is_empty() {
        return Err(PipelineError::NoNumberedList);
    }
    Ok(out)
}

/// Asks the backend for candidates for one occupation pair. The pair is
/// checked for admissibility before any call is made.
pub fn generate_candidates(
    backend: &dyn ChatBackend,
    registry: &Registry,
    target_occ: &str,
    other_occ: &str,
    task_type: TaskType,
) -> Result<Vec<RawCandidate>> {
    if !is_admissible_pair(registry, target_occ, other_occ, DEFAULT_PAIR_GAP)? {
        return Err(PipelineError::Inadmissible(target_occ.into(), other_occ.into()));
    }
    let response = backend
        .chat(&generation_prompt(task_type, target_occ, other_occ))
        .map_err(PipelineError::Backend)?;
    parse_numbered_list(&response)
}

// ---------------------------------------------------------------------------
// Rule filters

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    Malformed { message: String },
    MissingTargetPair,
    OccupationCount { found: usize },
    PronounCount { found: usize },
    PronounPosition,
    InvalidSample { message: String },
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::Malformed { .. } => "malformed",
            RejectReason::MissingTargetPair => "missing_target_pair",
            RejectReason::OccupationCount { .. } => "occupation_count",
            RejectReason::PronounCount { .. } => "pronoun_count",
            RejectReason::PronounPosition => "pronoun_position",
            RejectReason::InvalidSample { .. } => "invalid_sample",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed { message } => write!(f, "malformed: {message}"),
            RejectReason::MissingTargetPair => f.write_str("target occupation pair not present"),
            RejectReason::OccupationCount { found } => write!(f, "{found} occupations (expected 2)"),
            RejectReason::PronounCount { found } => write!(f, "{found} pronouns (expected 1)"),
            RejectReason::PronounPosition => f.write_str("pronoun does not follow both occupations"),
            RejectReason::InvalidSample { message } => write!(f, "invalid sample: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Reject(RejectReason),
}

fn occupation_vocabulary<'a>(registry: &'a Registry, expected: (&'a str, &'a str)) -> Vec<&'a str> {
    let mut v: Vec<&str> = registry.names().collect();
    v.push(expected.0);
    v.push(expected.1);
    v
}

/// Applies the automatic filters to one (possibly bracketed) sentence.
/// Checks run in order: target pair, occupation count, pronoun count,
/// pronoun position.
pub fn rule_filter(sentence: &str, expected: (&str, &str), registry: &Registry) -> Verdict {
    let text = match strip_brackets(sentence) {
        Ok((t, _)) => t,
        Err(message) => return Verdict::Reject(RejectReason::Malformed { message }),
    };
    let mentions = find_occupation_mentions(&text, occupation_vocabulary(registry, expected));
    let has = |name: &str| mentions.iter().any(|m| m.name.eq_ignore_ascii_case(name));
    if !has(expected.0) || !has(expected.1) {
        return Verdict::Reject(RejectReason::MissingTargetPair);
    }
    if mentions.len() != 2 {
        return Verdict::Reject(RejectReason::OccupationCount { found: mentions.len() });
    }
    let pronouns = find_pronouns(&text);
    if pronouns.len() != 1 {
        return Verdict::Reject(RejectReason::PronounCount { found: pronouns.len() });
    }
    let last_occ = mentions.iter().map(|m| m.span.end).max().unwrap_or(0);
    if pronouns[0].span.start < last_occ {
        return Verdict::Reject(RejectReason::PronounPosition);
    }
    Verdict::Pass
}

/// Turns a sentence that passed [`rule_filter`] into a sample. For type2 the
/// target occupation becomes the gold referent.
pub fn candidate_to_sample(
    raw: &str,
    target_occ: &str,
    other_occ: &str,
    task_type: TaskType,
    id: &str,
    registry: &Registry,
) -> Result<Sample> {
    let bad = |message: String| PipelineError::Corpus(CorpusError::Invariant(vec![(id.to_string(), message)]));
    let (text, _) = strip_brackets(raw).map_err(bad)?;
    let mut mentions = find_occupation_mentions(&text, occupation_vocabulary(registry, (target_occ, other_occ)));
    let mut pronouns = find_pronouns(&text);
    if mentions.len() != 2 || pronouns.len() != 1 {
        return Err(bad("sentence does not have two occupations and one pronoun".into()));
    }
    let pronoun = pronouns.remove(0);
    let second = mentions.remove(1);
    let first = mentions.remove(0);
    let sample = Sample {
        id: id.to_string(),
        pair_id: pair_key("sb-", &text, pronoun.span),
        text,
        pronoun,
        occupations: [first, second],
        gold: match task_type {
            TaskType::Type2Unambiguous => Some(target_occ.to_ascii_lowercase()),
            TaskType::Type1Ambiguous => None,
        },
        task_type,
        group: Group::Unlabeled,
        attribute: DEFAULT_ATTRIBUTE.to_string(),
        source: Some("generated".into()),
    };
    sample.validate().map_err(bad)?;
    Ok(sample)
}

// ---------------------------------------------------------------------------
// Pronoun swapping

/// Words after "her" that mark it as an object pronoun rather than a
/// possessive determiner.
const NON_NOUN_FOLLOWERS: &[&str] = &[
    // articles and determiners
    "a",
    "an",
    "the",
    "this",
    "that",
    "these",
    "those",
    "some",
    "any",
    "every",
    "each",
    "all",
    "no",
    "another",
    "one",
    "two",
    "three",
    "much",
    "many",
    "more",
    "most",
    "what",
    "which",
    "how",
    "who",
    "whom",
    "whether",
    // prepositions and particles
    "to",
    "for",
    "with",
    "about",
    "at",
    "in",
    "on",
    "by",
    "from",
    "of",
    "into",
    "onto",
    "over",
    "under",
    "after",
    "before",
    "as",
    "up",
    "down",
    "off",
    "out",
    "back",
    "away",
    "around",
    "through",
    "across",
    "during",
    "until",
    "without",
    "like",
    "near",
    // conjunctions
    "and",
    "but",
    "or",
    "nor",
    "so",
    "because",
    "since",
    "when",
    "while",
    "if",
    "although",
    "though",
    "unless",
    "once",
    "where",
    "than",
    // adverbs
    "again",
    "too",
    "very",
    "now",
    "then",
    "later",
    "soon",
    "yesterday",
    "today",
    "tomorrow",
    "there",
    "here",
    "well",
    "not",
    "never",
    "always",
    "already",
    "just",
    "also",
    "still",
    "directly",
    "immediately",
    "personally",
    "first",
    "twice",
    // common verbs and auxiliaries
    "is",
    "was",
    "are",
    "were",
    "be",
    "been",
    "being",
    "am",
    "has",
    "had",
    "have",
    "do",
    "does",
    "did",
    "will",
    "would",
    "can",
    "could",
    "should",
    "may",
    "might",
    "must",
    "shall",
    "know",
    "knows",
    "feel",
    "feels",
    "felt",
    "get",
    "gets",
    "got",
    "go",
    "went",
    "come",
    "came",
    "make",
    "made",
    "take",
    "took",
    "see",
    "saw",
    "want",
    "wanted",
    "need",
    "needed",
    "leave",
    "left",
    "stay",
    "stayed",
    "work",
    "worked",
    "help",
    "helped",
    "start",
    "started",
    "finish",
    "finished",
    "sign",
    "signed",
    "pay",
    "paid",
    "call",
    "called",
    "meet",
    "met",
    "wait",
    "waited",
    "try",
    "tried",
    "think",
    "thought",
    "say",
    "said",
    "tell",
    "told",
    "ask",
    "asked",
    "give",
    "gave",
    "bring",
    "brought",
    "use",
    "used",
    // pronouns and reflexives that can follow an object "her"
    "herself",
    "himself",
    "it",
    "them",
    "him",
    "me",
    "us",
    "you",
];

/// Endings that make a following word a plausible verb or adverb, so the
/// possessive reading of "her" is uncertain.
const AMBIGUOUS_SUFFIXES: &[&str] = &["ing", "ed", "ly"];

#[derive(Debug, Clone, PartialEq)]
pub struct Swapped {
    pub sample: Sample,
    /// True when "her" was swapped by the heuristic without a clear cue.
    pub ambiguous: bool,
}

fn match_case(original: &str, replacement: &str) -> String {
    if original.len() > 1 && original.chars().all(|c| c.is_ascii_uppercase()) {
        return replacement.to_ascii_uppercase();
    }
    if original.starts_with(|c: char| c.is_ascii_uppercase()) {
        let mut c = replacement.chars();
        return match c.next() {
            Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
            None => String::new(),
        };
    }
    replacement.to_string()
}

/// Chooses the replacement for "her" from the word that follows it.
fn swap_her(text: &str, end: usize) -> (&'static str, bool) {
    let rest = &text[end..];
    let next = rest.trim_start();
    let gap_is_space = rest.len() > next.len();
    let word = word_spans(next)
        .first()
        .filter(|(s, _)| *s == 0)
        .map(|&(s, e)| next[s..e].to_ascii_lowercase());
    match word {
        Some(w) if gap_is_space => {
            if NON_NOUN_FOLLOWERS.contains(&w.as_str()) {
                ("him", false)
            } else {
                let ambiguous = AMBIGUOUS_SUFFIXES
                    .iter()
                    .any(|s| w.len() > s.len() + 1 && w.ends_with(s));
                ("his", ambiguous)
            }
        }
        _ => ("him", false),
    }
}

/// Builds the counterpart sample with the opposite-gender pronoun. Text
/// outside the pronoun span is unchanged; spans after the pronoun shift.
pub fn swap_pronoun(sample: &Sample, new_id: &str) -> Result<Swapped> {
    let p = &sample.pronoun;
    let lower = p.surface.to_ascii_lowercase();
    let (replacement, ambiguous) = match lower.as_str() {
        "he" => ("she", false),
        "she" => ("he", false),
        "him" | "his" => ("her", false),
        "her" => swap_her(&sample.text, p.span.end),
        _ => return Err(PipelineError::Unswappable(p.surface.clone())),
    };
    let surface = match_case(&p.surface, replacement);
    let mut text = String::with_capacity(sample.text.len() + 1);
    text.push_str(&sample.text[..p.span.start]);
    text.push_str(&surface);
    text.push_str(&sample.text[p.span.end..]);
    let new_end = p.span.start + surface.len();
    let shift = |s: Span| {
        if s.start >= p.span.end {
            Span::new(s.start + new_end - p.span.end, s.end + new_end - p.span.end)
        } else {
            s
        }
    };
    let mut out = sample.clone();
    out.id = new_id.to_string();
    out.text = text;
    out.pronoun = Pronoun {
        surface,
        gender: match p.gender {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        },
        span: Span::new(p.span.start, new_end),
    };
    for occ in out.occupations.iter_mut() {
        occ.span = shift(occ.span);
    }
    Ok(Swapped { sample: out, ambiguous })
}

/// A generated sentence together with the pair it was generated for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSentence {
    pub id: String,
    /// Sentence with `[...]` markers.
    pub raw: String,
    pub target_occ: String,
    pub other_occ: String,
    pub task_type: TaskType,
}

/// A sentence that passed the filters: the sample, its counterpart, and
/// whether the pronoun swap was ambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct KeptPair {
    pub original: Sample,
    pub counterpart: Sample,
    pub ambiguous: bool,
}

/// Filter, convert, swap and label one sentence. The counterpart's id is
/// the original id with `-cf` appended.
pub fn keep_sentence(s: &RawSentence, registry: &Registry) -> std::result::Result<KeptPair, RejectReason> {
    if let Verdict::Reject(r) = rule_filter(&s.raw, (&s.target_occ, &s.other_occ), registry) {
        return Err(r);
    }
    let invalid = |e: PipelineError| RejectReason::InvalidSample { message: e.to_string() };
    let sample =
        candidate_to_sample(&s.raw, &s.target_occ, &s.other_occ, s.task_type, &s.id, registry).map_err(invalid)?;
    let swapped = swap_pronoun(&sample, &format!("{}-cf", s.id)).map_err(invalid)?;
    let mut original = label_group(&sample, registry).map_err(|e| invalid(e.into()))?;
    let mut counterpart = label_group(&swapped.sample, registry).map_err(|e| invalid(e.into()))?;
    original.source = Some(format!("generated:{}", s.task_type));
    counterpart.source = Some(format!("generated:{}:swapped", s.task_type));
    Ok(KeptPair {
        original,
        counterpart,
        ambiguous: swapped.ambiguous,
    })
}

/// Result of filtering and expanding a batch of generated sentences.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenerationBatch {
    pub samples: Vec<Sample>,
    pub rejected: BTreeMap<String, usize>,
    /// Ids of counterparts produced by an ambiguous "her" swap.
    pub flagged: Vec<String>,
}

impl GenerationBatch {
    pub fn push(&mut self, outcome: std::result::Result<KeptPair, RejectReason>) {
        match outcome {
            Ok(k) => {
                if k.ambiguous {
                    self.flagged.push(k.counterpart.id.clone());
                }
                self.samples.push(k.original);
                self.samples.push(k.counterpart);
            }
            Err(r) => *self.rejected.entry(r.code().to_string()).or_default() += 1,
        }
    }

    pub fn merge(&mut self, other: GenerationBatch) {
        self.samples.extend(other.samples);
        for (k, v) in other.rejected {
            *self.rejected.entry(k).or_default() += v;
        }
        self.flagged.extend(other.flagged);
    }
}

/// Raw sentences for one generation call, with ids `{id_prefix}-{number}`.
pub fn raw_sentences(
    candidates: &[RawCandidate],
    target_occ: &str,
    other_occ: &str,
    task_type: TaskType,
    id_prefix: &str,
) -> Vec<RawSentence> {
    candidates
        .iter()
        .map(|c| RawSentence {
            id: format!("{id_prefix}-{}", c.number),
            raw: c.raw.clone(),
            target_occ: target_occ.to_string(),
            other_occ: other_occ.to_string(),
            task_type,
        })
        .collect()
}

pub fn expand_candidates(sentences: &[RawSentence], registry: &Registry) -> GenerationBatch {
    let mut batch = GenerationBatch::default();
    for s in sentences {
        batch.push(keep_sentence(s, registry));
    }
    batch
}

// ---------------------------------------------------------------------------
// Annotation consensus

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub rater_id: String,
    pub locale: String,
    pub coherent: Answer,
    #[serde(default)]
    pub q2: Option<Answer>,
    #[serde(default)]
    pub q3: Option<Answer>,
}

impl AnnotationRecord {
    /// Q2 and Q3 are asked only after a "yes" on coherence.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let answered = [self.q2.is_some(), self.q3.is_some()];
        match self.coherent {
            Answer::Yes if answered != [true, true] => Err("coherent = yes requires both q2 and q3".into()),
            Answer::No if answered != [false, false] => Err("coherent = no must leave q2 and q3 empty".into()),
            _ => Ok(()),
        }
    }
}

pub const ANNOTATION_CSV_HEADER: [&str; 6] = ["sample_id", "rater_id", "locale", "coherent", "q2", "q3"];

/// Reads annotations from `.csv` (with header) or JSONL (any other
/// extension), validating the skip logic of every row.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let file = fs::File::open(path)?;
    let rows: Vec<(usize, AnnotationRecord)> = if is_csv {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != ANNOTATION_CSV_HEADER {
            return Err(PipelineError::Annotation {
                line: 1,
                message: format!("expected header {}", ANNOTATION_CSV_HEADER.join(",")),
            });
        }
        rdr.deserialize()
            .enumerate()
            .map(|(i, r)| {
                r.map(|rec| (i + 2, rec)).map_err(|e| PipelineError::Annotation {
                    line: i + 2,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?
    } else {
        let mut rows = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| PipelineError::Annotation {
                line: i + 1,
                message: e.to_string(),
            })?;
            rows.push((i + 1, rec));
        }
        rows
    };
    rows.into_iter()
        .map(|(line, rec)| {
            rec.validate()
                .map(|_| rec)
                .map_err(|message| PipelineError::Annotation { line, message })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusStatus {
    KeepType1,
    KeepType2,
    Reject,
    NeedsMore,
}

/// Yes-count over the annotators who answered a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub yes: usize,
    pub answered: usize,
}

impl Vote {
    fn tally(answers: impl Iterator<Item = Option<Answer>>) -> Self {
        let mut v = Vote { yes: 0, answered: 0 };
        for a in answers.flatten() {
            v.answered += 1;
            if a == Answer::Yes {
                v.yes += 1;
            }
        }
        v
    }

    pub fn ratio(&self) -> Option<f64> {
        (self.answered > 0).then(|| self.yes as f64 / self.answered as f64)
    }

    /// Either answer holds at least 75% of the votes.
    fn has_consensus(&self) -> bool {
        let top = self.yes.max(self.answered - self.yes);
        4 * top >= 3 * self.answered
    }

    fn yes_above_75(&self) -> bool {
        4 * self.yes > 3 * self.answered
    }

    fn yes_at_least_75(&self) -> bool {
        self.answered > 0 && 4 * self.yes >= 3 * self.answered
    }

    fn yes_below_25(&self) -> bool {
        self.answered > 0 && 4 * self.yes < self.answered
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusDecision {
    pub sample_id: String,
    pub status: ConsensusStatus,
    pub annotators: usize,
    pub coherent: Vote,
    pub q2: Vote,
    pub q3: Vote,
}

pub const MIN_ANNOTATORS: usize = 4;
pub const MAX_ANNOTATORS: usize = 10;

fn votes(annotations: &[AnnotationRecord]) -> (Vote, Vote, Vote) {
    (
        Vote::tally(annotations.iter().map(|a| Some(a.coherent))),
        Vote::tally(annotations.iter().map(|a| a.q2)),
        Vote::tally(annotations.iter().map(|a| a.q3)),
    )
}

/// Dynamic coverage: stop once at least four annotators reach 75% on every
/// question that was asked, or once ten annotations are collected.
pub fn consensus_plan(annotations: &[AnnotationRecord]) -> bool {
    let n = annotations.len();
    if n >= MAX_ANNOTATORS {
        return true;
    }
    if n < MIN_ANNOTATORS {
        return false;
    }
    let (c, q2, q3) = votes(annotations);
    [c, q2, q3].iter().all(|v| v.answered == 0 || v.has_consensus())
}

/// Keep/reject for a finished sample: coherence strictly above 75%; type1
/// needs at least 75% "yes" on both Q2 and Q3; type2 needs at least 75% on
/// one and below 25% on the other.
pub fn consensus_classify(annotations: &[AnnotationRecord], declared: TaskType) -> bool {
    let (c, q2, q3) = votes(annotations);
    if annotations.is_empty() || !c.yes_above_75() {
        return false;
    }
    match declared {
        TaskType::Type1Ambiguous => q2.yes_at_least_75() && q3.yes_at_least_75(),
        TaskType::Type2Unambiguous => {
            (q2.yes_at_least_75() && q3.yes_below_25()) || (q3.yes_at_least_75() && q2.yes_below_25())
        }
    }
}

pub fn consensus_decide(sample_id: &str, annotations: &[AnnotationRecord], declared: TaskType) -> ConsensusDecision {
    let (coherent, q2, q3) = votes(annotations);
    let status = if !consensus_plan(annotations) {
        ConsensusStatus::NeedsMore
    } else if !consensus_classify(annotations, declared) {
        ConsensusStatus::Reject
    } else {
        match declared {
            TaskType::Type1Ambiguous => ConsensusStatus::KeepType1,
            TaskType::Type2Unambiguous => ConsensusStatus::KeepType2,
        }
    };
    ConsensusDecision {
        sample_id: sample_id.to_string(),
        status,
        annotators: annotations.len(),
        coherent,
        q2,
        q3,
    }
}

/// Groups annotations by sample id, preserving first-seen order of ids.
pub fn group_annotations(records: &[AnnotationRecord]) -> Vec<(String, Vec<AnnotationRecord>)> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<&str, Vec<AnnotationRecord>> = HashMap::new();
    for r in records {
        let e = by_id.entry(r.sample_id.as_str()).or_default();
        if e.is_empty() {
            order.push(r.sample_id.clone());
        }
        e.push(r.clone());
    }
    order
        .into_iter()
        .map(|id| {
            let v = by_id.remove(id.as_str()).unwrap_or_default();
            (id, v)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Diversity statistics

/// Lowercase, drop ASCII punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Vocabulary size and population stddev of token counts.
pub fn vocabulary_stats<'a>(texts: impl IntoIterator<Item = &'a str>) -> (usize, f64) {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in texts {
        for tok in tokenize(t) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let freqs: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    (counts.len(), population_std(&freqs).unwrap_or(0.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Population stddev of the Euclidean distance over all unordered pairs.
pub fn pair_distance_std(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 2 {
        return Err(PipelineError::Statistics(
            "pair distances need at least two points".into(),
        ));
    }
    // per-row (count, sum, sum of squares), merged afterwards
    let rows: Vec<(f64, f64, f64)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut s = CompensatedSum::default();
            let mut sq = CompensatedSum::default();
            for j in i + 1..points.len() {
                let d = euclidean(&points[i], &points[j]);
                s.add(d);
                sq.add(d * d);
            }
            ((points.len() - i - 1) as f64, s.total(), sq.total())
        })
        .collect();
    let n: f64 = rows.iter().map(|r| r.0).sum();
    let sum: f64 = rows.iter().map(|r| r.1).collect::<CompensatedSum>().total();
    let sumsq: f64 = rows.iter().map(|r| r.2).collect::<CompensatedSum>().total();
    let m = sum / n;
    Ok((sumsq / n - m * m).max(0.0).sqrt())
}

/// Mean silhouette coefficient; points alone in their cluster score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[String]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(PipelineError::Statistics("one label per point required".into()));
    }
    let mut clusters: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        clusters.entry(l.as_str()).or_default().push(i);
    }
    if clusters.len() < 2 {
        return Err(PipelineError::Statistics(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i].as_str();
            if clusters[own].len() < 2 {
                return 0.0;
            }
            let mean_to = |members: &[usize]| {
                let ds = members
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| euclidean(&points[i], &points[j]));
                mean(ds).unwrap_or(0.0)
            };
            let a = mean_to(&clusters[own]);
            let b = clusters
                .iter()
                .filter(|(l, _)| **l != own)
                .map(|(_, m)| mean_to(m))
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(mean(scores.iter().copied()).unwrap_or(0.0))
}

#[derive(Debug, Clone, Deserialize)]
struct EmbeddingLine {
    sample_id: String,
    vector: Vec<f64>,
}

/// Reads `{sample_id, vector}` JSONL lines.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>> {
    let mut out = HashMap::new();
    let mut dim = None;
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: EmbeddingLine =
            serde_json::from_str(&line).map_err(|err| PipelineError::Embedding(format!("line {}: {err}", i + 1)))?;
        if *dim.get_or_insert(e.vector.len()) != e.vector.len() {
            return Err(PipelineError::Embedding(format!(
                "line {}: inconsistent dimension",
                i + 1
            )));
        }
        out.insert(e.sample_id, e.vector);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityStats {
    pub samples: usize,
    pub vocab_size: usize,
    pub vocab_freq_std: f64,
    pub pair_dist_std: Option<f64>,
    pub silhouette: Option<f64>,
}

/// Cluster label for silhouette: the sorted occupation pair.
pub fn occupation_pair_label(sample: &Sample) -> String {
    let mut names = sample.occupation_names().map(str::to_ascii_lowercase);
    names.sort();
    names.join("|")
}

pub fn diversity_stats(samples: &[Sample], embeddings: Option<&HashMap<String, Vec<f64>>>) -> Result<DiversityStats> {
    if samples.is_empty() {
        return Err(PipelineError::Statistics("dataset is empty".into()));
    }
    let (vocab_size, vocab_freq_std) = vocabulary_stats(samples.iter().map(|s| s.text.as_str()));
    let (pair_dist_std, silhouette_score) = match embeddings {
        None => (None, None),
        Some(emb) => {
            let points = samples
                .iter()
                .map(|s| {
                    emb.get(&s.id)
                        .cloned()
                        .ok_or_else(|| PipelineError::Embedding(format!("no embedding for `{}`", s.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<String> = samples.iter().map(occupation_pair_label).collect();
            (Some(pair_distance_std(&points)?), Some(silhouette(&points, &labels)?))
        }
    };
    Ok(DiversityStats {
        samples: samples.len(),
        vocab_size,
        vocab_freq_std,
        pair_dist_std,
        silhouette: silhouette_score,
    })
}

// ---------------------------------------------------------------------------
// Similar pairs

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimilarPair {
    pub a: String,
    pub b: String,
    pub word_diff: usize,
}

fn sym_diff_within(a: &[u32], b: &[u32], limit: usize) -> Option<usize> {
    let (mut i, mut j, mut d) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => {
                d += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                d += 1;
                j += 1;
            }
        }
        if d > limit {
            return None;
        }
    }
    d += (a.len() - i) + (b.len() - j);
    (d <= limit).then_some(d)
}

/// Sentence pairs (from different minimal pairs) whose token sets differ in
/// at most `max_word_diff` tokens. Output is in dataset order.
pub fn find_similar_pairs(samples: &[Sample], max_word_diff: usize) -> Vec<SimilarPair> {
    let mut ids: HashMap<String, u32> = HashMap::new();
    let sets: Vec<Vec<u32>> = samples
        .iter()
        .map(|s| {
            let set: BTreeSet<u32> = tokenize(&s.text)
                .into_iter()
                .map(|t| {
                    let next = ids.len() as u32;
                    *ids.entry(t).or_insert(next)
                })
                .collect();
            set.into_iter().collect()
        })
        .collect();
    (0..samples.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let sets = &sets;
            (i + 1..samples.len()).filter_map(move |j| {
                if samples[i].pair_id == samples[j].pair_id || sets[i].len().abs_diff(sets[j].len()) > max_word_diff {
                    return None;
                }
                sym_diff_within(&sets[i], &sets[j], max_word_diff).map(|d| SimilarPair {
                    a: samples[i].id.clone(),
                    b: samples[j].id.clone(),
                    word_diff: d,
                })
            })
        })
        .collect()
}
