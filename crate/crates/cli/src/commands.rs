use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use ucerf_core::corpus::{
    admissible_occupation_pairs, is_admissible_pair, load_dataset, write_samples_jsonl, Dataset, DatasetFormat,
    Registry, Sample, TaskType,
};
use ucerf_core::evaluate::{evaluate_log, EvalConfig, MetricReport};
use ucerf_core::metrics::DEFAULT_BINS;
use ucerf_core::pipeline::{
    consensus_decide, diversity_stats, find_similar_pairs, generate_candidates, group_annotations, keep_sentence,
    raw_sentences, read_annotations, read_embeddings, AnnotationRecord, ConsensusDecision, ConsensusStatus,
    GenerationBatch, RawSentence, DEFAULT_MAX_WORD_DIFF, DEFAULT_PAIR_GAP,
};
use ucerf_core::predlog::{read_log, write_log, PredictionLogRecord};
use ucerf_core::report::{build_report, emit_model_report, emit_table, table_to_markdown, to_json};
use ucerf_core::tasks::{PromptTemplate, TaskKind};
use ucerf_inference::runner::score_dataset;
use ucerf_inference::{Client, EndpointConfig, ResponseCache, ScoringMode};

use crate::config::{parse_seeds, Settings};
use crate::{
    flag_names, CliError, DatasetArgs, EndpointArgs, EvaluateArgs, GenerateArgs, MetricArgs, ScoreArgs, StatsArgs,
    ValidateArgs,
};

const DEFAULT_OUT: &str = "ucerf-out";
const DEFAULT_SEEDS: &str = "0..4";

fn settings(subcommand: &str, config: Option<&Path>) -> Result<Settings, CliError> {
    let names = flag_names(subcommand);
    let allowed: Vec<&str> = names.iter().map(String::as_str).collect();
    Settings::load(config, &allowed)
}

fn out_dir(s: &Settings, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = s.resolve_or(flag, "out", PathBuf::from(DEFAULT_OUT))?;
    fs::create_dir_all(&dir).map_err(|e| CliError::data(dir.display(), e))?;
    Ok(dir)
}

fn load_registry(s: &Settings, flag: Option<PathBuf>) -> Result<Registry, CliError> {
    match s.resolve(flag, "registry")? {
        Some(p) => Registry::load_csv(&p).map_err(|e| CliError::data(p.display(), e)),
        None => Ok(Registry::bls_default()),
    }
}

fn parse_task_type(text: &str) -> Result<TaskType, String> {
    match text.trim().to_ascii_lowercase().as_str() {
        "type1" | "type1_ambiguous" | "1" => Ok(TaskType::Type1Ambiguous),
        "type2" | "type2_unambiguous" | "2" => Ok(TaskType::Type2Unambiguous),
        other => Err(format!("unknown task type `{other}` (expected type1 or type2)")),
    }
}

fn dataset_format(path: &Path, format: Option<&str>, wb_type: Option<&str>) -> Result<DatasetFormat, CliError> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let winobias = match format {
        Some("jsonl") => false,
        Some("winobias") => true,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown dataset format `{other}` (jsonl or winobias)"
            )))
        }
        None => !name.ends_with(".jsonl") && !name.ends_with(".json"),
    };
    if !winobias {
        return Ok(DatasetFormat::Jsonl);
    }
    let task_type = match wb_type {
        Some(t) => parse_task_type(t).map_err(CliError::Usage)?,
        None if name.contains("type1") => TaskType::Type1Ambiguous,
        None if name.contains("type2") => TaskType::Type2Unambiguous,
        None => {
            return Err(CliError::Usage(format!(
                "cannot tell the task type of {}; pass --winobias-type",
                path.display()
            )))
        }
    };
    Ok(DatasetFormat::WinoBiasTxt(task_type))
}

fn load_one(s: &Settings, path: &Path, args: &DatasetArgs, registry: &Registry) -> Result<Dataset, CliError> {
    let format = s.resolve(args.format.clone(), "format")?;
    let wb_type = s.resolve(args.winobias_type.clone(), "winobias-type")?;
    let format = dataset_format(path, format.as_deref(), wb_type.as_deref())?;
    load_dataset(path, format, registry).map_err(|e| CliError::data(path.display(), e))
}

fn dataset_paths(s: &Settings, args: &DatasetArgs) -> Result<Vec<PathBuf>, CliError> {
    let raw: Vec<String> = args.dataset.iter().map(|p| p.to_string_lossy().into_owned()).collect();
    let paths: Vec<PathBuf> = s.list(raw, "dataset").into_iter().map(PathBuf::from).collect();
    if paths.is_empty() {
        return Err(CliError::Usage("--dataset is required".into()));
    }
    Ok(paths)
}

/// Loads and concatenates every `--dataset` file.
fn load_datasets(s: &Settings, args: &DatasetArgs) -> Result<Dataset, CliError> {
    let registry = load_registry(s, args.registry.clone())?;
    let paths = dataset_paths(s, args)?;
    let mut names = Vec::new();
    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &paths {
        let d = load_one(s, p, args, &registry)?;
        for sample in &d.samples {
            if !seen.insert(sample.id.clone()) {
                return Err(CliError::Data(format!(
                    "{}: duplicate sample id `{}`",
                    p.display(),
                    sample.id
                )));
            }
        }
        names.push(d.name);
        samples.extend(d.samples);
    }
    Ok(Dataset::new(names.join("+"), samples, registry))
}

fn endpoint_config(s: &Settings, args: &EndpointArgs) -> Result<EndpointConfig, CliError> {
    let base_url: String = s.require(args.endpoint.clone(), "endpoint")?;
    let model: String = s.require(args.model.clone(), "model")?;
    let mut c = EndpointConfig::new(base_url, model);
    c.api_key_env = s.resolve(args.api_key_env.clone(), "api-key-env")?;
    c.concurrency = s.resolve_or(args.concurrency, "concurrency", c.concurrency)?;
    c.timeout_secs = s.resolve_or(args.timeout, "timeout", c.timeout_secs)?;
    c.max_retries = s.resolve_or(args.max_retries, "max-retries", c.max_retries)?;
    c.retry_base_ms = s.resolve_or(args.retry_base_ms, "retry-base-ms", c.retry_base_ms)?;
    Ok(c)
}

fn client(s: &Settings, config: EndpointConfig, cache_flag: Option<PathBuf>, out: &Path) -> Result<Client, CliError> {
    let dir = s.resolve_or(cache_flag, "cache-dir", out.join("cache"))?;
    let cache = ResponseCache::new(&dir).map_err(|e| CliError::data(dir.display(), e))?;
    Ok(Client::new(config, Some(cache))?)
}

/// Reads a template file, dropping a single trailing newline so that files
/// saved by ordinary editors reproduce the built-in templates.
fn load_template(path: &Path, kind: TaskKind) -> Result<PromptTemplate, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
    let text = text
        .strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(&text);
    PromptTemplate::new(kind, text).map_err(|e| CliError::data(path.display(), e))
}

fn eval_config(
    s: &Settings,
    args: &MetricArgs,
    task: TaskKind,
    default_seeds: Option<&str>,
) -> Result<EvalConfig, CliError> {
    let mut c = EvalConfig::new(task);
    c.estimator = s.resolve_or(args.estimator, "estimator", c.estimator)?;
    c.positive_class = s.resolve_or(args.positive_class, "positive-class", c.positive_class)?;
    c.bins = s.resolve_or(args.bins, "bins", DEFAULT_BINS)?;
    if c.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    let seeds: Option<String> = s.resolve(args.seeds.clone(), "seeds")?;
    c.seeds = match seeds.as_deref().or(default_seeds) {
        Some(text) => parse_seeds(text).map_err(|e| CliError::Usage(format!("--seeds: {e}")))?,
        None => Vec::new(),
    };
    Ok(c)
}

fn task_of_log(records: &[PredictionLogRecord], path: &Path) -> Result<TaskKind, CliError> {
    let tasks: BTreeSet<String> = records.iter().map(|r| r.task.to_string()).collect();
    match (records.first(), tasks.len()) {
        (Some(r), 1) => Ok(r.task),
        (None, _) => Err(CliError::Data(format!("{}: prediction log is empty", path.display()))),
        _ => Err(CliError::Data(format!(
            "{}: log mixes tasks; pass --task",
            path.display()
        ))),
    }
}

fn read_log_at(path: &Path) -> Result<Vec<PredictionLogRecord>, CliError> {
    read_log(path).map_err(|e| CliError::data(path.display(), e))
}

fn write_outputs(reports: &[MetricReport], out: &Path, per_model: bool, w: &mut dyn Write) -> Result<(), CliError> {
    if per_model {
        for r in reports {
            emit_model_report(r, out)?;
        }
    }
    let table = build_report(reports)?;
    emit_table(&table, out)?;
    write!(w, "{}", table_to_markdown(&table))?;
    writeln!(w, "\nwrote {}", out.display())?;
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let s = settings("evaluate", args.config.as_deref())?;
    let dataset = load_datasets(&s, &args.data)?;
    let out = out_dir(&s, args.out.clone())?;
    let from_log: Option<PathBuf> = s.resolve(args.from_log.clone(), "from-log")?;
    let task_flag: Option<TaskKind> = s.resolve(args.metric.task, "task")?;

    let (records, task, default_seeds) = match from_log {
        Some(path) => {
            let records = read_log_at(&path)?;
            let task = match task_flag {
                Some(t) => t,
                None => task_of_log(&records, &path)?,
            };
            // without --seeds, every seed in the log is evaluated
            (records, task, None)
        }
        None => {
            let task = task_flag.ok_or_else(|| CliError::Usage("--task is required".into()))?;
            let mut config = endpoint_config(&s, &args.endpoint)?;
            config.mode = s.resolve_or(args.mode, "mode", ScoringMode::Echo)?;
            config.top_n = s.resolve_or(args.top_n, "top-n", config.top_n)?;
            let template = match s.resolve(args.template_file.clone(), "template-file")? {
                Some(p) => Some(load_template(&p, task)?),
                None => None,
            };
            let seeds = eval_config(&s, &args.metric, task, Some(DEFAULT_SEEDS))?.seeds;
            let client = client(&s, config, args.endpoint.cache_dir.clone(), &out)?;
            let records = score_dataset(&client, &dataset.samples, task, template.as_ref(), &seeds)?;
            log::info!("{} network calls", client.network_calls());
            write_log(&records, out.join("predictions.jsonl"))?;
            (records, task, Some(DEFAULT_SEEDS))
        }
    };
    let config = eval_config(&s, &args.metric, task, default_seeds)?;
    let report = evaluate_log(&dataset, &records, &config)?;
    write_outputs(&[report], &out, true, w)
}

pub fn score(args: ScoreArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let s = settings("score", args.config.as_deref())?;
    let out = out_dir(&s, args.out.clone())?;
    let task_flag: Option<TaskKind> = s.resolve(args.metric.task, "task")?;
    let mut dataset = None;
    let mut reports = Vec::new();
    for path in &args.inputs {
        let is_report = path.extension().is_some_and(|e| e == "json");
        if is_report {
            let text = fs::read_to_string(path).map_err(|e| CliError::data(path.display(), e))?;
            let r: MetricReport = serde_json::from_str(&text).map_err(|e| CliError::data(path.display(), e))?;
            reports.push(r);
            continue;
        }
        if dataset.is_none() {
            dataset = Some(load_datasets(&s, &args.data)?);
        }
        let records = read_log_at(path)?;
        let task = match task_flag {
            Some(t) => t,
            None => task_of_log(&records, path)?,
        };
        let config = eval_config(&s, &args.metric, task, None)?;
        let report = evaluate_log(dataset.as_ref().expect("loaded above"), &records, &config)
            .map_err(|e| CliError::data(path.display(), e))?;
        reports.push(report);
    }
    write_outputs(&reports, &out, false, w)
}

#[derive(Debug, Serialize)]
struct Rejection {
    id: String,
    reason: String,
    detail: String,
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    input: usize,
    kept_sentences: usize,
    kept_samples: usize,
    rejected: BTreeMap<String, usize>,
    rejections: Vec<Rejection>,
    flagged_ambiguous_swap: Vec<String>,
    consensus: Vec<ConsensusDecision>,
}

fn read_raw_sentences(path: &Path) -> Result<Vec<RawSentence>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::data(path.display(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RawSentence = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), CliError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::data(path.display(), e))
}

pub fn validate(args: ValidateArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let s = settings("validate", args.config.as_deref())?;
    let input: PathBuf = s.require(args.input.clone(), "input")?;
    let registry = load_registry(&s, args.registry.clone())?;
    let out = out_dir(&s, args.out.clone())?;
    let sentences = read_raw_sentences(&input)?;
    let annotations: Option<BTreeMap<String, Vec<AnnotationRecord>>> =
        match s.resolve(args.annotations.clone(), "annotations")? {
            Some(p) => {
                let recs = read_annotations(&p).map_err(|e| CliError::data(p.display(), e))?;
                Some(group_annotations(&recs).into_iter().collect())
            }
            None => None,
        };

    let mut report = ValidationReport {
        input: sentences.len(),
        kept_sentences: 0,
        kept_samples: 0,
        rejected: BTreeMap::new(),
        rejections: Vec::new(),
        flagged_ambiguous_swap: Vec::new(),
        consensus: Vec::new(),
    };
    let mut kept: Vec<Sample> = Vec::new();
    let reject = |report: &mut ValidationReport, id: &str, reason: &str, detail: String| {
        *report.rejected.entry(reason.to_string()).or_default() += 1;
        report.rejections.push(Rejection {
            id: id.to_string(),
            reason: reason.to_string(),
            detail,
        });
    };
    for sentence in &sentences {
        let pair = match keep_sentence(sentence, &registry) {
            Ok(p) => p,
            Err(r) => {
                reject(&mut report, &sentence.id, r.code(), r.to_string());
                continue;
            }
        };
        if let Some(anns) = &annotations {
            let empty = Vec::new();
            let group = anns.get(&sentence.id).unwrap_or(&empty);
            let decision = consensus_decide(&sentence.id, group, sentence.task_type);
            let status = decision.status;
            report.consensus.push(decision);
            match status {
                ConsensusStatus::KeepType1 | ConsensusStatus::KeepType2 => {}
                ConsensusStatus::Reject => {
                    reject(
                        &mut report,
                        &sentence.id,
                        "consensus_reject",
                        "annotators did not confirm".into(),
                    );
                    continue;
                }
                ConsensusStatus::NeedsMore => {
                    reject(
                        &mut report,
                        &sentence.id,
                        "needs_more_annotations",
                        format!("{} annotations, consensus not reached", group.len()),
                    );
                    continue;
                }
            }
        }
        if pair.ambiguous {
            report.flagged_ambiguous_swap.push(pair.counterpart.id.clone());
        }
        report.kept_sentences += 1;
        kept.push(pair.original);
        kept.push(pair.counterpart);
    }
    report.kept_samples = kept.len();
    write_samples_jsonl(&kept, out.join("kept.jsonl"))?;
    fs::write(out.join("rejections.json"), to_json(&report)?)?;
    writeln!(
        w,
        "{} sentences, {} kept ({} samples), {} rejected",
        report.input,
        report.kept_sentences,
        report.kept_samples,
        report.input - report.kept_sentences
    )?;
    for (reason, n) in &report.rejected {
        writeln!(w, "  {reason}: {n}")?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct GenerationReport {
    model: String,
    pairs: usize,
    raw_sentences: usize,
    kept_samples: usize,
    rejected: BTreeMap<String, usize>,
    flagged_ambiguous_swap: Vec<String>,
    failures: Vec<String>,
}

fn parse_types(text: &str) -> Result<Vec<TaskType>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t = parse_task_type(part).map_err(CliError::Usage)?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("--types is empty".into()));
    }
    Ok(out)
}

pub fn generate(args: GenerateArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let s = settings("generate", args.config.as_deref())?;
    let registry = load_registry(&s, args.registry.clone())?;
    let gap = s.resolve_or(args.gap, "gap", DEFAULT_PAIR_GAP)?;
    let types = parse_types(&s.resolve_or(args.types.clone(), "types", "type1,type2".to_string())?)?;
    let all_pairs = s.flag(args.all_pairs, "all-pairs")?;
    let explicit = s.list(args.pairs.clone(), "pair");

    let mut pairs: Vec<(String, String)> = Vec::new();
    for p in &explicit {
        let (t, o) = p
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("--pair `{p}`: expected TARGET:OTHER")))?;
        pairs.push((t.trim().to_string(), o.trim().to_string()));
    }
    if all_pairs {
        for (m, f) in admissible_occupation_pairs(&registry, gap) {
            pairs.push((m.clone(), f.clone()));
            pairs.push((f, m));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Usage("give at least one --pair or --all-pairs".into()));
    }
    // refuse inadmissible pairs before any request is made
    for (t, o) in &pairs {
        let ok = is_admissible_pair(&registry, t, o, gap)?;
        if !ok {
            return Err(CliError::Data(format!(
                "occupation pair ({t}, {o}) is not admissible: it needs opposite stereotypes and a gap above {gap} points"
            )));
        }
    }

    let config = endpoint_config(&s, &args.endpoint)?;
    let model = config.model.clone();
    let out = out_dir(&s, args.out.clone())?;
    let client = client(&s, config, args.endpoint.cache_dir.clone(), &out)?;

    let mut all_raw = Vec::new();
    let mut batch = GenerationBatch::default();
    let mut failures = Vec::new();
    for (target, other) in &pairs {
        for &task_type in &types {
            let prefix = format!("gen-{}-{}-{}", task_type.short(), slug(target), slug(other));
            let candidates = match generate_candidates(&client, &registry, target, other, task_type) {
                Ok(c) => c,
                Err(e @ ucerf_core::pipeline::PipelineError::NoNumberedList) => {
                    log::warn!("{prefix}: {e}");
                    failures.push(format!("{prefix}: {e}"));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let raw = raw_sentences(&candidates, target, other, task_type, &prefix);
            for r in &raw {
                batch.push(keep_sentence(r, &registry));
            }
            all_raw.extend(raw);
        }
    }

    write_jsonl(&all_raw, &out.join("raw.jsonl"))?;
    write_samples_jsonl(&batch.samples, out.join("candidates.jsonl"))?;
    let report = GenerationReport {
        model,
        pairs: pairs.len(),
        raw_sentences: all_raw.len(),
        kept_samples: batch.samples.len(),
        rejected: batch.rejected.clone(),
        flagged_ambiguous_swap: batch.flagged.clone(),
        failures,
    };
    fs::write(out.join("generation_report.json"), to_json(&report)?)?;
    writeln!(
        w,
        "{} raw sentences from {} pairs, {} candidate samples kept",
        report.raw_sentences, report.pairs, report.kept_samples
    )?;
    for (reason, n) in &report.rejected {
        writeln!(w, "  {reason}: {n}")?;
    }
    Ok(())
}

fn slug(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_ascii_lowercase()
}

#[derive(Debug, Serialize)]
struct StatsRow {
    dataset: String,
    samples: usize,
    type1: usize,
    type2: usize,
    vocab_size: usize,
    vocab_freq_std: f64,
    pair_dist_std: Option<f64>,
    silhouette: Option<f64>,
    similar_pairs: Option<usize>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn stats(args: StatsArgs, w: &mut dyn Write) -> Result<(), CliError> {
    let s = settings("stats", args.config.as_deref())?;
    let registry = load_registry(&s, args.data.registry.clone())?;
    let paths = dataset_paths(&s, &args.data)?;
    let emb_raw: Vec<String> = args
        .embeddings
        .iter()
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    let embeddings: Vec<PathBuf> = s.list(emb_raw, "embeddings").into_iter().map(PathBuf::from).collect();
    if !embeddings.is_empty() && embeddings.len() != paths.len() {
        return Err(CliError::Usage(format!(
            "{} --embeddings for {} --dataset; give one per dataset or none",
            embeddings.len(),
            paths.len()
        )));
    }
    let similar = s.flag(args.similar_pairs, "similar-pairs")?;
    let max_diff = s.resolve_or(args.max_word_diff, "max-word-diff", DEFAULT_MAX_WORD_DIFF)?;
    let out: Option<PathBuf> = s.resolve(args.out.clone(), "out")?;

    let mut rows = Vec::new();
    let mut similar_all = Vec::new();
    for (i, path) in paths.iter().enumerate() {
        let d = load_one(&s, path, &args.data, &registry)?;
        let emb = match embeddings.get(i) {
            Some(p) => Some(read_embeddings(p).map_err(|e| CliError::data(p.display(), e))?),
            None => None,
        };
        let st = diversity_stats(&d.samples, emb.as_ref()).map_err(|e| CliError::data(path.display(), e))?;
        let sim = similar.then(|| find_similar_pairs(&d.samples, max_diff));
        rows.push(StatsRow {
            dataset: d.name.clone(),
            samples: st.samples,
            type1: d.count_by_type(TaskType::Type1Ambiguous),
            type2: d.count_by_type(TaskType::Type2Unambiguous),
            vocab_size: st.vocab_size,
            vocab_freq_std: st.vocab_freq_std,
            pair_dist_std: st.pair_dist_std,
            silhouette: st.silhouette,
            similar_pairs: sim.as_ref().map(Vec::len),
        });
        if let Some(sim) = sim {
            similar_all.extend(sim.into_iter().map(|p| (d.name.clone(), p)));
        }
    }

    writeln!(
        w,
        "| dataset | size | type1 | type2 | vocab | vocab freq std | pair dist std | silhouette |{}",
        if similar { " similar pairs |" } else { "" }
    )?;
    writeln!(
        w,
        "|---|---:|---:|---:|---:|---:|---:|---:|{}",
        if similar { "---:|" } else { "" }
    )?;
    for r in &rows {
        write!(
            w,
            "| {} | {} | {} | {} | {} | {:.4} | {} | {} |",
            r.dataset,
            r.samples,
            r.type1,
            r.type2,
            r.vocab_size,
            r.vocab_freq_std,
            opt(r.pair_dist_std),
            opt(r.silhouette)
        )?;
        match r.similar_pairs {
            Some(n) => writeln!(w, " {n} |")?,
            None => writeln!(w)?,
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(&dir).map_err(|e| CliError::data(dir.display(), e))?;
        fs::write(dir.join("stats.json"), to_json(&rows)?)?;
        if similar {
            #[derive(Serialize)]
            struct Line<'a> {
                dataset: &'a str,
                #[serde(flatten)]
                pair: &'a ucerf_core::pipeline::SimilarPair,
            }
            let lines: Vec<Line> = similar_all.iter().map(|(d, p)| Line { dataset: d, pair: p }).collect();
            write_jsonl(&lines, &dir.join("similar_pairs.jsonl"))?;
        }
    }
    Ok(())
}
