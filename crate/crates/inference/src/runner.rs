//! Scores a whole dataset into prediction-log records.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use ucerf_core::corpus::Sample;
use ucerf_core::predlog::{prompt_hash, LoggedCandidate, PredictionLogRecord};
use ucerf_core::tasks::{candidate_set, PromptTemplate, TaskKind, TaskSpec};

use crate::client::Client;
use crate::scoring::score_candidates;
use crate::Result;

fn score_one(client: &Client, sample: &Sample, spec: &TaskSpec) -> Result<PredictionLogRecord> {
    let (prompt, options) = spec.prompt(sample);
    let candidates = candidate_set(sample, spec.kind);
    let scores = score_candidates(client, &sample.id, &prompt, &candidates, spec.kind)?;
    Ok(PredictionLogRecord {
        sample_id: sample.id.clone(),
        pair_id: sample.pair_id.clone(),
        task: spec.kind,
        model: client.config().model.clone(),
        seed: spec.seed,
        prompt_hash: prompt_hash(&prompt),
        candidates: scores
            .candidates
            .candidates
            .iter()
            .map(|c| LoggedCandidate::from_score(c.label.clone(), c.log_score))
            .collect(),
        options,
        provenance: scores.candidates.provenance,
        timestamp: scores.stored_at,
    })
}

/// Scores every sample under every seed, seed-major, in dataset order.
///
/// Up to `concurrency` requests run at once. Output order does not depend on
/// completion order, and on failure the error of the earliest failing job
/// is returned.
pub fn score_dataset(
    client: &Client,
    samples: &[Sample],
    kind: TaskKind,
    template: Option<&PromptTemplate>,
    seeds: &[u64],
) -> Result<Vec<PredictionLogRecord>> {
    let specs: Vec<TaskSpec> = seeds
        .iter()
        .map(|&seed| {
            let spec = TaskSpec::new(kind, seed);
            match template {
                Some(t) => spec.with_template(t.clone()),
                None => spec,
            }
        })
        .collect();
    let jobs: Vec<(&Sample, &TaskSpec)> = specs
        .iter()
        .flat_map(|spec| samples.iter().map(move |s| (s, spec)))
        .collect();
    let workers = client.config().concurrency.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<PredictionLogRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(sample, spec)) = jobs.get(i) else { break };
                let r = score_one(client, sample, spec);
                if r.is_err() {
                    abort.store(true, Ordering::Relaxed);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut out = Vec::with_capacity(jobs.len());
    for r in results.into_inner().expect("results lock") {
        match r {
            Some(Ok(rec)) => out.push(rec),
            Some(Err(e)) => return Err(e),
            // skipped after an earlier failure; that failure comes first
            None => continue,
        }
    }
    Ok(out)
}
