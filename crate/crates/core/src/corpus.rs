//! Fairness datasets: samples, minimal pairs and the occupation registry.
//!
//! A [`Sample`] is one co-reference sentence with a single pronoun and two
//! occupations. Two samples sharing a `pair_id` form a [`MinimalPair`]: the
//! same sentence with the pronoun swapped to the opposite gender.
//!
//! Spans are 0-based `[start, end)` byte offsets into `text`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Attribute tag for the gender-occupation setting. Other attributes carry
/// their group labels in-file.
pub const DEFAULT_ATTRIBUTE: &str = "gender-occupation";

const BLS_CSV: &str = include_str!("../assets/bls_occupations.csv");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violation in {} sample(s): {}", .0.len(), format_violations(.0))]
    Invariant(Vec<(String, String)>),
    #[error("unknown occupation `{0}`")]
    UnknownOccupation(String),
    #[error("invalid registry: {0}")]
    Registry(String),
    #[error("pair `{0}` does not have exactly two variants")]
    OrphanPair(String),
    #[error("pair `{pair_id}`: {reason}")]
    PairMismatch { pair_id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[(String, String)]) -> String {
    v.iter()
        .map(|(id, msg)| format!("{id}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn opposite(self) -> Gender {
        match self {
            Gender::Male => Gender::Female,
            Gender::Female => Gender::Male,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Male => "male",
            Gender::Female => "female",
        })
    }
}

/// Binary pronoun forms recognised by the engine.
pub const PRONOUNS: [&str; 5] = ["he", "she", "his", "her", "him"];

/// Gender of a pronoun surface form, case-insensitive.
pub fn pronoun_gender(word: &str) -> Option<Gender> {
    match word.to_ascii_lowercase().as_str() {
        "he" | "his" | "him" => Some(Gender::Male),
        "she" | "her" => Some(Gender::Female),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationRecord {
    pub name: String,
    pub pct_female: f64,
}

impl OccupationRecord {
    pub fn new(name: impl Into<String>, pct_female: f64) -> Self {
        Self {
            name: name.into().to_ascii_lowercase(),
            pct_female,
        }
    }

    /// Majority rule: female-stereotyped iff more than half the workforce is female.
    pub fn stereotype(&self) -> Gender {
        if self.pct_female > 50.0 {
            Gender::Female
        } else {
            Gender::Male
        }
    }
}

/// Occupation stereotype registry keyed by lowercase name.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    records: Vec<OccupationRecord>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn new(records: Vec<OccupationRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.name.is_empty() {
                return Err(CorpusError::Registry("empty occupation name".into()));
            }
            if !(0.0..=100.0).contains(&r.pct_female) {
                return Err(CorpusError::Registry(format!(
                    "`{}` has pct_female {} outside [0, 100]",
                    r.name, r.pct_female
                )));
            }
            if index.insert(r.name.clone(), i).is_some() {
                return Err(CorpusError::Registry(format!("duplicate occupation `{}`", r.name)));
            }
        }
        Ok(Self { records, index })
    }

    /// The 40 occupations and female workforce percentages used by WinoBias.
    pub fn bls_default() -> Self {
        Self::from_csv_reader(BLS_CSV.as_bytes()).expect("bundled registry is valid")
    }

    /// Reads a registry from CSV with header `name,pct_female`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            name: String,
            pct_female: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["name", "pct_female"] {
            return Err(CorpusError::Registry(
                "registry CSV header must be `name,pct_female`".into(),
            ));
        }
        let mut records = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            records.push(OccupationRecord::new(row.name.trim(), row.pct_female));
        }
        Self::new(records)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(fs::File::open(path)?)
    }

    pub fn get(&self, name: &str) -> Option<&OccupationRecord> {
        self.index.get(&name.to_ascii_lowercase()).map(|&i| &self.records[i])
    }

    pub fn stereotype(&self, name: &str) -> Result<Gender> {
        self.get(name)
            .map(OccupationRecord::stereotype)
            .ok_or_else(|| CorpusError::UnknownOccupation(name.to_string()))
    }

    pub fn records(&self) -> &[OccupationRecord] {
        &self.records
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// `[start, end)` byte range, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        text.get(self.start..self.end)
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pronoun {
    pub surface: String,
    pub gender: Gender,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMention {
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskType {
    #[serde(rename = "type1_ambiguous")]
    Type1Ambiguous,
    #[serde(rename = "type2_unambiguous")]
    Type2Unambiguous,
}

impl TaskType {
    pub fn short(self) -> &'static str {
        match self {
            TaskType::Type1Ambiguous => "type1",
            TaskType::Type2Unambiguous => "type2",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Pro,
    Anti,
    Unlabeled,
}

fn default_attribute() -> String {
    DEFAULT_ATTRIBUTE.to_string()
}

fn default_group() -> Group {
    Group::Unlabeled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub pronoun: Pronoun,
    pub occupations: [OccupationMention; 2],
    #[serde(default)]
    pub gold: Option<String>,
    pub task_type: TaskType,
    pub pair_id: String,
    #[serde(default = "default_group")]
    pub group: Group,
    #[serde(default = "default_attribute")]
    pub attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Sample {
    /// Checks every per-sample invariant, returning the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let text = &self.text;
        let check_span = |what: &str, span: &Span| -> std::result::Result<&str, String> {
            if span.is_empty() {
                return Err(format!("{what} span {:?} is empty", span));
            }
            span.slice(text)
                .ok_or_else(|| format!("{what} span [{}, {}) is outside the text", span.start, span.end))
        };
        let p = check_span("pronoun", &self.pronoun.span)?;
        if p != self.pronoun.surface {
            return Err(format!(
                "pronoun span covers `{p}` but surface is `{}`",
                self.pronoun.surface
            ));
        }
        match pronoun_gender(p) {
            Some(g) if g == self.pronoun.gender => {}
            Some(_) => return Err(format!("pronoun `{p}` has the wrong gender")),
            None => return Err(format!("`{p}` is not a supported pronoun")),
        }
        for (i, occ) in self.occupations.iter().enumerate() {
            let s = check_span(&format!("occupation {i}"), &occ.span)?;
            if !s.eq_ignore_ascii_case(&occ.name) {
                return Err(format!("occupation span covers `{s}` but name is `{}`", occ.name));
            }
        }
        let [a, b] = &self.occupations;
        if a.name.eq_ignore_ascii_case(&b.name) {
            return Err("both occupations are the same".into());
        }
        if a.span.overlaps(&b.span) || a.span.overlaps(&self.pronoun.span) || b.span.overlaps(&self.pronoun.span) {
            return Err("spans overlap".into());
        }
        if self.pronoun.span.start < a.span.end.max(b.span.end) {
            return Err("pronoun does not follow both occupations".into());
        }
        match (&self.gold, self.task_type) {
            (Some(_), TaskType::Type1Ambiguous) => return Err("type1 sample must not carry a gold referent".into()),
            (None, TaskType::Type2Unambiguous) => return Err("type2 sample requires a gold referent".into()),
            (Some(g), _) if !self.occupations.iter().any(|o| o.name == *g) => {
                return Err(format!("gold `{g}` is not one of the occupations"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn occupation_names(&self) -> [&str; 2] {
        [&self.occupations[0].name, &self.occupations[1].name]
    }

    /// Text with the pronoun removed; identical for both variants of a pair.
    pub fn masked_text(&self) -> (&str, &str) {
        (
            &self.text[..self.pronoun.span.start],
            &self.text[self.pronoun.span.end..],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub pair_id: String,
    pub variant_a: Sample,
    pub variant_b: Sample,
}

impl MinimalPair {
    pub fn variants(&self) -> [&Sample; 2] {
        [&self.variant_a, &self.variant_b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Sample>,
    pub registry: Registry,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>, registry: Registry) -> Self {
        Self {
            name: name.into(),
            samples,
            registry,
        }
    }

    /// Stable fingerprint over sample ids and texts, used to check that
    /// several prediction logs refer to the same dataset.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update([0u8]);
            h.update(s.text.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn count_by_type(&self, task_type: TaskType) -> usize {
        self.samples.iter().filter(|s| s.task_type == task_type).count()
    }

    /// Writes the samples as JSON Lines.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_samples_jsonl(&self.samples, path)
    }
}

pub fn write_samples_jsonl(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("samples serialize"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Jsonl,
    /// WinoBias bracket notation; the task type is supplied by the caller
    /// because the file does not encode it in our sense.
    WinoBiasTxt(TaskType),
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat, registry: &Registry) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let file = fs::File::open(path)?;
    let samples = match format {
        DatasetFormat::Jsonl => read_jsonl_samples(BufReader::new(file))?,
        DatasetFormat::WinoBiasTxt(task_type) => read_winobias(BufReader::new(file), &name, task_type, registry)?,
    };
    // samples without a pro/anti label get one from the registry
    let samples = samples
        .into_iter()
        .map(|s| match s.group {
            Group::Unlabeled => label_group(&s, registry),
            _ => Ok(s),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(name, samples, registry.clone()))
}

/// Parses JSONL samples and validates every sample invariant.
pub fn read_jsonl_samples<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    validate_samples(&samples)?;
    Ok(samples)
}

pub fn validate_samples(samples: &[Sample]) -> Result<()> {
    let mut violations: Vec<(String, String)> = samples
        .iter()
        .filter_map(|s| s.validate().err().map(|e| (s.id.clone(), e)))
        .collect();
    let mut seen = HashSet::new();
    for s in samples {
        if !seen.insert(s.id.as_str()) {
            violations.push((s.id.clone(), "duplicate sample id".into()));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CorpusError::Invariant(violations))
    }
}

/// Whole-word, case-insensitive occupation mentions, longest match first,
/// left to right and non-overlapping.
pub fn find_occupation_mentions<'n, I>(text: &str, names: I) -> Vec<OccupationMention>
where
    I: IntoIterator<Item = &'n str>,
{
    let mut names: Vec<String> = names.into_iter().map(|n| n.to_ascii_lowercase()).collect();
    names.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    names.dedup();
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        if !is_word(bytes[pos]) || (pos > 0 && is_word(bytes[pos - 1])) {
            pos += 1;
            continue;
        }
        let hit = names
            .iter()
            .find(|n| lower[pos..].starts_with(n.as_str()) && bytes.get(pos + n.len()).is_none_or(|&b| !is_word(b)));
        match hit {
            Some(n) => {
                out.push(OccupationMention {
                    name: n.clone(),
                    span: Span::new(pos, pos + n.len()),
                });
                pos += n.len();
            }
            None => pos += 1,
        }
    }
    out
}

/// All pronoun tokens from the binary pronoun table, in text order.
pub fn find_pronouns(text: &str) -> Vec<Pronoun> {
    let mut out = Vec::new();
    for (start, end) in word_spans(text) {
        let w = &text[start..end];
        if let Some(gender) = pronoun_gender(w) {
            out.push(Pronoun {
                surface: w.to_string(),
                gender,
                span: Span::new(start, end),
            });
        }
    }
    out
}

/// Byte ranges of maximal ASCII-alphabetic runs.
pub(crate) fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                i += 1;
            }
            out.push((start, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Removes `[`/`]` markers, returning the clean text and the spans the
/// bracketed segments occupy in it.
pub fn strip_brackets(raw: &str) -> std::result::Result<(String, Vec<Span>), String> {
    let mut clean = String::with_capacity(raw.len());
    let mut spans = Vec::new();
    let mut open: Option<usize> = None;
    for c in raw.chars() {
        match c {
            '[' => {
                if open.is_some() {
                    return Err("nested `[`".into());
                }
                open = Some(clean.len());
            }
            ']' => {
                let start = open.take().ok_or("unmatched `]`")?;
                spans.push(Span::new(start, clean.len()));
            }
            _ => clean.push(c),
        }
    }
    if open.is_some() {
        return Err("unclosed `[`".into());
    }
    Ok((clean, spans))
}

/// Strips a leading article from a bracketed occupation phrase, returning
/// the sub-span that holds the occupation itself.
fn strip_article(text: &str, span: Span) -> Span {
    let s = &text[span.start..span.end];
    let lower = s.to_ascii_lowercase();
    for article in ["the ", "a ", "an "] {
        if lower.starts_with(article) {
            return Span::new(span.start + article.len(), span.end);
        }
    }
    span
}

/// Pair key shared by the two pronoun variants of a sentence.
pub fn pair_key(prefix: &str, text: &str, pronoun: Span) -> String {
    let mut h = Sha256::new();
    h.update(&text.as_bytes()[..pronoun.start]);
    h.update([0u8]);
    h.update(&text.as_bytes()[pronoun.end..]);
    format!("{prefix}{}", &hex::encode(h.finalize())[..12])
}

/// Reads WinoBias-style lines such as
/// `1 [The developer] argued with the designer because [he] did not like the design.`
pub fn read_winobias<R: BufRead>(
    reader: R,
    stem: &str,
    task_type: TaskType,
    registry: &Registry,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut violations = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let id = format!("{stem}-{lineno}");
        let body = match trimmed.split_once(' ') {
            Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => rest.trim_start(),
            _ => trimmed,
        };
        match winobias_sample(body, &id, task_type, registry) {
            Ok(s) => samples.push(s),
            Err(WinoLineError::Parse(message)) => return Err(CorpusError::Parse { line: lineno, message }),
            Err(WinoLineError::Invariant(message)) => violations.push((id, message)),
        }
    }
    if !violations.is_empty() {
        return Err(CorpusError::Invariant(violations));
    }
    Ok(samples)
}

enum WinoLineError {
    Parse(String),
    Invariant(String),
}

fn winobias_sample(
    body: &str,
    id: &str,
    task_type: TaskType,
    registry: &Registry,
) -> std::result::Result<Sample, WinoLineError> {
    let (text, spans) = strip_brackets(body).map_err(WinoLineError::Parse)?;
    let mut pronoun = None;
    let mut referent = None;
    for span in spans {
        let seg = &text[span.start..span.end];
        if let Some(gender) = pronoun_gender(seg) {
            if pronoun
                .replace(Pronoun {
                    surface: seg.to_string(),
                    gender,
                    span,
                })
                .is_some()
            {
                return Err(WinoLineError::Invariant("more than one bracketed pronoun".into()));
            }
        } else if referent.replace(span).is_some() {
            return Err(WinoLineError::Invariant("more than one bracketed referent".into()));
        }
    }
    let pronoun = pronoun.ok_or_else(|| WinoLineError::Invariant("no bracketed pronoun".into()))?;
    let referent = referent.ok_or_else(|| WinoLineError::Invariant("no bracketed referent".into()))?;
    let occ_span = strip_article(&text, referent);
    let gold = text[occ_span.start..occ_span.end].to_ascii_lowercase();
    if registry.get(&gold).is_none() {
        return Err(WinoLineError::Invariant(format!(
            "bracketed referent `{gold}` is not a registry occupation"
        )));
    }
    let others: Vec<OccupationMention> = find_occupation_mentions(&text, registry.names())
        .into_iter()
        .filter(|m| !m.span.overlaps(&occ_span))
        .collect();
    let other = match others.as_slice() {
        [one] => one.clone(),
        _ => {
            return Err(WinoLineError::Invariant(format!(
                "expected exactly one other occupation, found {}",
                others.len()
            )))
        }
    };
    let gold_mention = OccupationMention {
        name: gold.clone(),
        span: occ_span,
    };
    let occupations = if gold_mention.span.start < other.span.start {
        [gold_mention, other]
    } else {
        [other, gold_mention]
    };
    let pair_id = pair_key("wb-", &text, pronoun.span);
    let sample = Sample {
        id: id.to_string(),
        text,
        pronoun,
        occupations,
        gold: (task_type == TaskType::Type2Unambiguous).then_some(gold),
        task_type,
        pair_id,
        group: Group::Unlabeled,
        attribute: default_attribute(),
        source: None,
    };
    sample.validate().map_err(WinoLineError::Invariant)?;
    Ok(sample)
}

/// Assigns pro/anti from the pronoun gender and the gold occupation's
/// stereotype. Type1 samples become unlabeled; samples with a non-default
/// attribute keep their in-file labels.
pub fn label_group(sample: &Sample, registry: &Registry) -> Result<Sample> {
    let mut out = sample.clone();
    if sample.attribute != DEFAULT_ATTRIBUTE {
        return Ok(out);
    }
    out.group = match (&sample.gold, sample.task_type) {
        (Some(gold), TaskType::Type2Unambiguous) => {
            if registry.stereotype(gold)? == sample.pronoun.gender {
                Group::Pro
            } else {
                Group::Anti
            }
        }
        _ => Group::Unlabeled,
    };
    Ok(out)
}

pub fn label_groups(samples: &[Sample], registry: &Registry) -> Result<Vec<Sample>> {
    samples.iter().map(|s| label_group(s, registry)).collect()
}

/// Groups samples by `pair_id` into minimal pairs, ordered by `pair_id`.
///
/// Within a pair, `variant_a` is the pro variant for type2 pairs and the
/// male-pronoun variant otherwise.
pub fn build_pairs(samples: &[Sample]) -> Result<Vec<MinimalPair>> {
    let mut by_pair: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_pair.entry(s.pair_id.as_str()).or_default().push(s);
    }
    let mut pairs = Vec::with_capacity(by_pair.len());
    for (pair_id, variants) in by_pair {
        let [a, b] = variants.as_slice() else {
            return Err(CorpusError::OrphanPair(pair_id.to_string()));
        };
        let mismatch = |reason: &str| CorpusError::PairMismatch {
            pair_id: pair_id.to_string(),
            reason: reason.to_string(),
        };
        if a.masked_text() != b.masked_text() {
            return Err(mismatch("variants differ outside the pronoun span"));
        }
        if a.pronoun.gender == b.pronoun.gender {
            return Err(mismatch("variants share the pronoun gender"));
        }
        if a.occupation_names() != b.occupation_names() {
            return Err(mismatch("variants name different occupations"));
        }
        if a.gold != b.gold {
            return Err(mismatch("variants have different gold referents"));
        }
        if a.task_type != b.task_type {
            return Err(mismatch("variants have different task types"));
        }
        if a.attribute != b.attribute {
            return Err(mismatch("variants have different attributes"));
        }
        let (va, vb) = if a.task_type == TaskType::Type2Unambiguous && a.attribute == DEFAULT_ATTRIBUTE {
            match (a.group, b.group) {
                (Group::Pro, Group::Anti) => (a, b),
                (Group::Anti, Group::Pro) => (b, a),
                _ => return Err(mismatch("type2 pair needs exactly one pro and one anti variant")),
            }
        } else if a.pronoun.gender == Gender::Male {
            (a, b)
        } else {
            (b, a)
        };
        pairs.push(MinimalPair {
            pair_id: pair_id.to_string(),
            variant_a: (*va).clone(),
            variant_b: (*vb).clone(),
        });
    }
    Ok(pairs)
}

/// Cross-stereotype occupation pairs whose female percentages differ by
/// more than `gap_pct`, each ordered (male-stereotyped, female-stereotyped).
pub fn admissible_occupation_pairs(registry: &Registry, gap_pct: f64) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let males = registry.records().iter().filter(|r| r.stereotype() == Gender::Male);
    for m in males {
        for f in registry.records().iter().filter(|r| r.stereotype() == Gender::Female) {
            if (m.pct_female - f.pct_female).abs() > gap_pct {
                out.push((m.name.clone(), f.name.clone()));
            }
        }
    }
    out
}

pub fn is_admissible_pair(registry: &Registry, a: &str, b: &str, gap_pct: f64) -> Result<bool> {
    let ra = registry
        .get(a)
        .ok_or_else(|| CorpusError::UnknownOccupation(a.into()))?;
    let rb = registry
        .get(b)
        .ok_or_else(|| CorpusError::UnknownOccupation(b.into()))?;
    Ok(ra.stereotype() != rb.stereotype() && (ra.pct_female - rb.pct_female).abs() > gap_pct)
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Builds a sample from a sentence with `[occupation]`-style markers
    /// absent; occupations and pronoun are located by search.
    pub fn sample(
        id: &str,
        pair_id: &str,
        text: &str,
        occs: [&str; 2],
        gold: Option<&str>,
        registry: &Registry,
    ) -> Sample {
        let mentions = find_occupation_mentions(text, occs.iter().copied());
        assert_eq!(mentions.len(), 2, "occupations in `{text}`");
        let pronoun = find_pronouns(text).pop().expect("pronoun");
        let s = Sample {
            id: id.into(),
            text: text.into(),
            pronoun,
            occupations: [mentions[0].clone(), mentions[1].clone()],
            gold: gold.map(str::to_string),
            task_type: if gold.is_some() {
                TaskType::Type2Unambiguous
            } else {
                TaskType::Type1Ambiguous
            },
            pair_id: pair_id.into(),
            group: Group::Unlabeled,
            attribute: default_attribute(),
            source: None,
        };
        s.validate().unwrap();
        label_group(&s, registry).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::sample;
    use super::*;

    fn reg() -> Registry {
        Registry::bls_default()
    }

    #[test]
    fn default_registry_shape() {
        let r = reg();
        assert_eq!(r.len(), 40);
        assert_eq!(
            r.records().iter().filter(|o| o.stereotype() == Gender::Female).count(),
            20
        );
        assert_eq!(r.stereotype("salesperson").unwrap(), Gender::Male);
        assert_eq!(r.stereotype("CEO").unwrap(), Gender::Male);
        assert_eq!(r.get("nurse").unwrap().pct_female, 90.0);
        assert_eq!(r.get("carpenter").unwrap().pct_female, 2.0);
    }

    #[test]
    fn registry_rejects_bad_rows() {
        assert!(Registry::new(vec![OccupationRecord::new("a", 101.0)]).is_err());
        assert!(Registry::new(vec![OccupationRecord::new("a", 1.0), OccupationRecord::new("A", 2.0)]).is_err());
        assert!(Registry::from_csv_reader("occ,pct\na,1\n".as_bytes()).is_err());
    }

    #[test]
    fn label_group_examples() {
        let r = reg();
        let pro = sample(
            "a",
            "p",
            "The carpenter helped the nurse because her shift ended.",
            ["carpenter", "nurse"],
            Some("nurse"),
            &r,
        );
        assert_eq!(pro.group, Group::Pro);
        let anti = sample(
            "b",
            "p",
            "The nurse helped the carpenter because her tools broke.",
            ["carpenter", "nurse"],
            Some("carpenter"),
            &r,
        );
        assert_eq!(anti.group, Group::Anti);
        let t1 = sample(
            "c",
            "q",
            "The nurse and the carpenter talked before she left.",
            ["carpenter", "nurse"],
            None,
            &r,
        );
        assert_eq!(t1.group, Group::Unlabeled);
        // idempotent
        assert_eq!(label_group(&pro, &r).unwrap(), pro);
    }

    #[test]
    fn label_group_unknown_occupation() {
        let r = Registry::new(vec![OccupationRecord::new("nurse", 90.0)]).unwrap();
        let full = reg();
        let s = sample(
            "a",
            "p",
            "The carpenter helped the nurse because her shift ended.",
            ["carpenter", "nurse"],
            Some("carpenter"),
            &full,
        );
        assert!(matches!(label_group(&s, &r), Err(CorpusError::UnknownOccupation(_))));
    }

    #[test]
    fn jsonl_round_trip_and_empty() {
        let r = reg();
        let s = sample(
            "a",
            "p",
            "The carpenter helped the nurse because her shift ended.",
            ["carpenter", "nurse"],
            Some("nurse"),
            &r,
        );
        let line = serde_json::to_string(&s).unwrap();
        assert!(line.contains("\"span\":[") && line.contains("\"task_type\":\"type2_unambiguous\""));
        let back = read_jsonl_samples(format!("{line}\n").as_bytes()).unwrap();
        assert_eq!(back, vec![s]);
        assert!(read_jsonl_samples("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn jsonl_parse_error_has_line_number() {
        let err = read_jsonl_samples("\n{not json}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn pronoun_before_occupations_is_invariant_violation() {
        let r = reg();
        let mut s = sample(
            "bad",
            "p",
            "The carpenter helped the nurse because her shift ended.",
            ["carpenter", "nurse"],
            Some("nurse"),
            &r,
        );
        s.text = "Her friend, the carpenter, helped the nurse.".into();
        s.pronoun = find_pronouns(&s.text).remove(0);
        let m = find_occupation_mentions(&s.text, ["carpenter", "nurse"]);
        s.occupations = [m[0].clone(), m[1].clone()];
        let line = serde_json::to_string(&s).unwrap();
        match read_jsonl_samples(line.as_bytes()).unwrap_err() {
            CorpusError::Invariant(v) => {
                assert_eq!(v[0].0, "bad");
                assert!(v[0].1.contains("pronoun does not follow"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn winobias_parsing() {
        let r = reg();
        let text = "1 [The developer] argued with the designer because [he] did not like the design.\n\
                    2 The developer argued with [the designer] because [her] idea cannot be implemented.\n";
        let samples = read_winobias(text.as_bytes(), "pro_stereotyped_type1", TaskType::Type2Unambiguous, &r).unwrap();
        assert_eq!(samples.len(), 2);
        let s = &samples[0];
        assert_eq!(
            s.text,
            "The developer argued with the designer because he did not like the design."
        );
        assert_eq!(s.gold.as_deref(), Some("developer"));
        assert_eq!(s.occupation_names(), ["developer", "designer"]);
        assert_eq!(&s.text[s.pronoun.span.start..s.pronoun.span.end], "he");
        assert_eq!(samples[1].gold.as_deref(), Some("designer"));
        assert_eq!(samples[1].id, "pro_stereotyped_type1-2");

        let t1 = read_winobias(text.as_bytes(), "x", TaskType::Type1Ambiguous, &r).unwrap();
        assert!(t1.iter().all(|s| s.gold.is_none()));
    }

    #[test]
    fn winobias_missing_referent_rejected() {
        let r = reg();
        let err = read_winobias(
            "1 The developer argued with the designer because [he] left.".as_bytes(),
            "f",
            TaskType::Type2Unambiguous,
            &r,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Invariant(_)));
        let err = read_winobias(
            "1 [The developer argued".as_bytes(),
            "f",
            TaskType::Type2Unambiguous,
            &r,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
    }

    #[test]
    fn winobias_variants_pair_up() {
        let r = reg();
        let pro = "1 [The developer] argued with the designer because [he] did not like the design.";
        let anti = "1 [The developer] argued with the designer because [she] did not like the design.";
        let mut all = read_winobias(pro.as_bytes(), "pro", TaskType::Type2Unambiguous, &r).unwrap();
        all.extend(read_winobias(anti.as_bytes(), "anti", TaskType::Type2Unambiguous, &r).unwrap());
        let all = label_groups(&all, &r).unwrap();
        let pairs = build_pairs(&all).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].variant_a.group, Group::Pro);
        assert_eq!(pairs[0].variant_a.pronoun.surface, "he");
    }

    #[test]
    fn build_pairs_errors() {
        let r = reg();
        let a = sample(
            "a",
            "p",
            "The carpenter helped the nurse because her shift ended.",
            ["carpenter", "nurse"],
            Some("nurse"),
            &r,
        );
        assert!(matches!(
            build_pairs(std::slice::from_ref(&a)),
            Err(CorpusError::OrphanPair(_))
        ));
        let b = sample(
            "b",
            "p",
            "The carpenter helped the nurse because his long shift ended.",
            ["carpenter", "nurse"],
            Some("nurse"),
            &r,
        );
        assert!(matches!(
            build_pairs(&[a.clone(), b]),
            Err(CorpusError::PairMismatch { .. })
        ));
        let b = sample(
            "b",
            "p",
            "The carpenter helped the nurse because his shift ended.",
            ["carpenter", "nurse"],
            Some("nurse"),
            &r,
        );
        let pairs = build_pairs(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(pairs[0].variant_a.id, "a");
        assert_eq!(pairs[0].variant_b.id, "b");
    }

    #[test]
    fn admissible_pairs_examples() {
        let two = Registry::new(vec![
            OccupationRecord::new("nurse", 90.0),
            OccupationRecord::new("carpenter", 2.0),
        ])
        .unwrap();
        assert_eq!(
            admissible_occupation_pairs(&two, 10.0),
            vec![("carpenter".to_string(), "nurse".to_string())]
        );
        let same = Registry::new(vec![
            OccupationRecord::new("accountant", 61.0),
            OccupationRecord::new("auditor", 61.0),
        ])
        .unwrap();
        assert!(admissible_occupation_pairs(&same, 10.0).is_empty());
        let close = Registry::new(vec![
            OccupationRecord::new("salesperson", 48.0),
            OccupationRecord::new("editor", 52.0),
        ])
        .unwrap();
        assert!(admissible_occupation_pairs(&close, 10.0).is_empty());
        assert_eq!(admissible_occupation_pairs(&close, 0.0).len(), 1);
        let all = admissible_occupation_pairs(&reg(), 10.0);
        assert!(all.iter().all(
            |(m, f)| reg().stereotype(m).unwrap() == Gender::Male && reg().stereotype(f).unwrap() == Gender::Female
        ));
    }

    #[test]
    fn occupation_matching_is_whole_word_and_longest() {
        let r = reg();
        let m = find_occupation_mentions("The construction worker met the designer about a design.", r.names());
        let names: Vec<_> = m.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["construction worker", "designer"]);
        let m = find_occupation_mentions("The CEO praised the guard’s attention.", r.names());
        let names: Vec<_> = m.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["ceo", "guard"]);
    }

    #[test]
    fn strip_brackets_spans() {
        let (t, s) = strip_brackets("The mover thanks [the housekeeper] and gives [her] a hug.").unwrap();
        assert_eq!(t, "The mover thanks the housekeeper and gives her a hug.");
        assert_eq!(&t[s[0].start..s[0].end], "the housekeeper");
        assert_eq!(&t[s[1].start..s[1].end], "her");
        assert!(strip_brackets("a ] b").is_err());
    }
}
