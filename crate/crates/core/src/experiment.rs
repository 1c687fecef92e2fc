//! The full grid: for every prompt style and subset size, hold out each
//! phrase of the subset in turn, translate it with the rest as context, and
//! score the answer.
//!
//! Translation calls may run concurrently (up to `max_in_flight`), but
//! results are slotted back by task index and scored afterwards in grid
//! order, so the output never depends on completion order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendConfig, BackendError, BackendKind, ResponseCache};
use crate::corpus::{leave_one_out, load_corpus, sample_subset, Columns, CorpusError, SubsetSpec};
use crate::fsutil::write_atomic;
use crate::metrics::{bleu_corpus, score_pair, tokenize, SentenceScores, DEFAULT_MAX_ORDER, METRICS_VERSION};
use crate::prompting::{PromptError, PromptStyle, PromptTemplates, RenderedPrompt};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot parse results: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus_path: PathBuf,
    pub columns: Columns,
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub styles: Vec<PromptStyle>,
    pub backend: BackendConfig,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub prompt_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults: sizes 10/50/100, both styles, seed 0, four requests in flight.
    pub fn new(corpus_path: impl Into<PathBuf>, backend: BackendConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            corpus_path: corpus_path.into(),
            columns: Columns::default(),
            sizes: vec![10, 50, 100],
            seed: 0,
            styles: PromptStyle::ALL.to_vec(),
            backend,
            max_in_flight: 4,
            cache_dir: None,
            output_dir: output_dir.into(),
            prompt_dir: None,
        }
    }

    fn validate(&self, corpus_len: usize) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.sizes.is_empty() {
            return bad("no subset sizes given".into());
        }
        if self.styles.is_empty() {
            return bad("no prompt styles given".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        for &k in &self.sizes {
            if k < 2 || k > corpus_len {
                return bad(format!("subset size {k} outside 2..={corpus_len}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub phrase_id: usize,
    pub style: PromptStyle,
    pub subset_size: usize,
    pub context_size: usize,
    pub source_text: String,
    pub reference: String,
    pub candidate: String,
    pub candidate_raw: String,
    /// `None` for failed records.
    pub scores: Option<SentenceScores>,
    pub latency: Duration,
    pub attempt_count: u32,
    pub from_cache: bool,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Means for one (style, size) group over its successful records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAggregate {
    pub style: PromptStyle,
    pub subset_size: usize,
    pub scored: usize,
    pub failed: usize,
    pub means: SentenceScores,
    /// Pooled-count BLEU over the group, for comparison with the mean.
    pub corpus_bleu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub metrics_version: String,
    pub prompt_fingerprint: String,
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<GroupAggregate>,
}

impl ExperimentResult {
    pub fn failed_count(&self) -> usize {
        self.records.iter().filter(|r| r.failed()).count()
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Parse {
            path: path.display().to_string(),
            source,
        })
    }
}

/// One rendered prompt, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLogEntry {
    pub style: PromptStyle,
    pub subset_size: usize,
    pub phrase_id: usize,
    pub context_size: usize,
    pub system_message: String,
    pub user_message: String,
}

/// Wall-clock facts about a run; kept apart from the result so the result
/// itself is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub elapsed_ms: u128,
    pub records: usize,
    pub failed: usize,
    pub from_cache: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub result: ExperimentResult,
    pub prompts: Vec<PromptLogEntry>,
    pub metadata: RunMetadata,
}

/// Per-group field-wise means over non-failed records.
pub fn aggregate(records: &[RunRecord]) -> BTreeMap<(PromptStyle, usize), SentenceScores> {
    let mut groups: BTreeMap<(PromptStyle, usize), Vec<&SentenceScores>> = BTreeMap::new();
    for r in records {
        if let Some(s) = &r.scores {
            groups.entry((r.style, r.subset_size)).or_default().push(s);
        }
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| SentenceScores::mean(v).map(|m| (k, m)))
        .collect()
}

/// [`aggregate`] plus counts and corpus BLEU, sorted by (style, size).
pub fn summarize(records: &[RunRecord]) -> Vec<GroupAggregate> {
    aggregate(records)
        .into_iter()
        .map(|((style, subset_size), means)| {
            let group: Vec<&RunRecord> = records
                .iter()
                .filter(|r| r.style == style && r.subset_size == subset_size)
                .collect();
            let toks: Vec<_> = group
                .iter()
                .filter(|r| !r.failed())
                .map(|r| (tokenize(&r.candidate), tokenize(&r.reference)))
                .collect();
            GroupAggregate {
                style,
                subset_size,
                scored: toks.len(),
                failed: group.len() - toks.len(),
                means,
                corpus_bleu: bleu_corpus(toks.iter().map(|(c, r)| (c, r)), DEFAULT_MAX_ORDER)
                    .unwrap_or(0.0),
            }
        })
        .collect()
}

struct Task {
    style: PromptStyle,
    subset_size: usize,
    phrase_id: usize,
    context_size: usize,
    source_text: String,
    reference: String,
    prompt: Result<RenderedPrompt, String>,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    let started_unix_ms = unix_ms();
    let clock = Instant::now();
    let corpus = load_corpus(&config.corpus_path, &config.columns)?;
    config.validate(corpus.len())?;
    let templates = match &config.prompt_dir {
        Some(dir) => PromptTemplates::from_dir(dir)?,
        None => PromptTemplates::builtin(),
    };
    let mut backend = Backend::new(config.backend.clone())?.with_max_in_flight(config.max_in_flight);
    if let Some(dir) = &config.cache_dir {
        backend = backend.with_cache(ResponseCache::open(dir).map_err(io_err(dir))?);
    }

    let mut tasks = Vec::new();
    for &style in &config.styles {
        for &size in &config.sizes {
            let subset = sample_subset(&corpus, SubsetSpec { size, seed: config.seed })?;
            for pair in subset.pairs() {
                let split = leave_one_out(&subset, pair.id)?;
                tasks.push(Task {
                    style,
                    subset_size: size,
                    phrase_id: pair.id,
                    context_size: split.context.len(),
                    source_text: pair.source_text.clone(),
                    reference: pair.reference_translation.clone(),
                    prompt: templates.render(style, &split).map_err(|e| e.to_string()),
                });
            }
        }
    }

    let responses = translate_all(&backend, &tasks, config.max_in_flight);

    let mut records = Vec::with_capacity(tasks.len());
    let mut prompts = Vec::new();
    for (task, response) in tasks.into_iter().zip(responses) {
        if let Ok(p) = &task.prompt {
            prompts.push(PromptLogEntry {
                style: task.style,
                subset_size: task.subset_size,
                phrase_id: task.phrase_id,
                context_size: task.context_size,
                system_message: p.system_message.clone(),
                user_message: p.user_message.clone(),
            });
        }
        let mut record = RunRecord {
            phrase_id: task.phrase_id,
            style: task.style,
            subset_size: task.subset_size,
            context_size: task.context_size,
            source_text: task.source_text,
            reference: task.reference,
            candidate: String::new(),
            candidate_raw: String::new(),
            scores: None,
            latency: Duration::ZERO,
            attempt_count: 0,
            from_cache: false,
            error: None,
        };
        match response {
            Ok(resp) => match score_pair(&resp.candidate, &record.reference) {
                Ok(scores) => {
                    record.candidate = resp.candidate;
                    record.candidate_raw = resp.candidate_raw;
                    record.scores = Some(scores);
                    record.latency = resp.latency;
                    record.attempt_count = resp.attempt_count;
                    record.from_cache = resp.from_cache;
                }
                Err(e) => record.error = Some(format!("scoring failed: {e}")),
            },
            Err(e) => record.error = Some(e),
        }
        if let Some(e) = &record.error {
            log::warn!(
                "{} size {} phrase {} failed: {e}",
                record.style,
                record.subset_size,
                record.phrase_id
            );
        }
        records.push(record);
    }

    let aggregates = summarize(&records);
    let failed = records.iter().filter(|r| r.failed()).count();
    let from_cache = records.iter().filter(|r| r.from_cache).count();
    let result = ExperimentResult {
        config: config.clone(),
        metrics_version: METRICS_VERSION.to_string(),
        prompt_fingerprint: templates.fingerprint(),
        records,
        aggregates,
    };
    let metadata = RunMetadata {
        started_unix_ms,
        finished_unix_ms: unix_ms(),
        elapsed_ms: clock.elapsed().as_millis(),
        records: result.records.len(),
        failed,
        from_cache,
    };
    Ok(ExperimentOutcome {
        result,
        prompts,
        metadata,
    })
}

/// Runs every task's translation on up to `max_in_flight` worker threads and
/// returns the responses in task order.
fn translate_all(
    backend: &Backend,
    tasks: &[Task],
    max_in_flight: usize,
) -> Vec<Result<crate::backend::TranslationResponse, String>> {
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let total = tasks.len();
    let workers = max_in_flight.clamp(1, total.max(1));
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, done) = (&next, &done);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let out = match &task.prompt {
                    Ok(p) => backend
                        .translate(p, Some(&task.reference))
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                let n = done.fetch_add(1, Ordering::SeqCst) + 1;
                if n % 20 == 0 || n == total {
                    log::info!("translated {n}/{total}");
                }
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<_>> = (0..total).map(|_| None).collect();
    for (i, out) in rx {
        slots[i] = Some(out);
    }
    slots
        .into_iter()
        .map(|s| s.unwrap_or_else(|| Err("worker exited without a result".into())))
        .collect()
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// `records.csv`: one row per record, scores blank for failed rows.
pub fn records_csv(records: &[RunRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "style",
        "subset_size",
        "phrase_id",
        "context_size",
        "source_text",
        "reference",
        "candidate",
    ];
    header.extend(SentenceScores::NAMES);
    header.extend(["from_cache", "error"]);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.style.to_string(),
            r.subset_size.to_string(),
            r.phrase_id.to_string(),
            r.context_size.to_string(),
            r.source_text.clone(),
            r.reference.clone(),
            r.candidate.clone(),
        ];
        match &r.scores {
            Some(s) => row.extend(s.values().map(fmt_f64)),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row.push(r.from_cache.to_string());
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// `aggregates.csv`: style, size, counts and the six metric means.
pub fn aggregates_csv(aggregates: &[GroupAggregate]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["style", "subset_size", "scored", "failed"];
    header.extend(SentenceScores::NAMES);
    header.push("corpus_bleu");
    w.write_record(&header)?;
    for a in aggregates {
        let mut row = vec![
            a.style.to_string(),
            a.subset_size.to_string(),
            a.scored.to_string(),
            a.failed.to_string(),
        ];
        row.extend(a.means.values().map(fmt_f64));
        row.push(fmt_f64(a.corpus_bleu));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// The config as written to `config.json`. Keys only ever come from the
/// environment, so the echo names the variable and marks the value redacted.
pub fn config_echo(config: &ExperimentConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).unwrap_or_default();
    if config.backend.kind == BackendKind::HttpChat {
        v["backend"]["api_key"] = serde_json::Value::String("[redacted]".into());
    }
    v
}

/// Writes `records.csv`, `records.json`, `aggregates.csv`, `config.json`,
/// `prompts.jsonl` and `metadata.json` into `dir`.
pub fn write_outcome(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_err = |name: &str| {
        let path = dir.join(name).display().to_string();
        move |source| ExperimentError::Csv { path, source }
    };
    let json = |v: &dyn erased::Json| v.to_pretty();
    let put = |name: &str, bytes: Vec<u8>| {
        let path = dir.join(name);
        write_atomic(&path, &bytes).map_err(io_err(&path))
    };
    put("records.csv", records_csv(&outcome.result.records).map_err(csv_err("records.csv"))?)?;
    put(
        "aggregates.csv",
        aggregates_csv(&outcome.result.aggregates).map_err(csv_err("aggregates.csv"))?,
    )?;
    put("records.json", json(&outcome.result))?;
    put("config.json", json(&config_echo(&outcome.result.config)))?;
    put("metadata.json", json(&outcome.metadata))?;
    let mut log = Vec::new();
    for p in &outcome.prompts {
        serde_json::to_writer(&mut log, p).expect("prompt log entry serializes");
        log.push(b'\n');
    }
    put("prompts.jsonl", log)?;
    Ok(())
}

mod erased {
    pub trait Json {
        fn to_pretty(&self) -> Vec<u8>;
    }

    impl<T: serde::Serialize> Json for T {
        fn to_pretty(&self) -> Vec<u8> {
            let mut v = serde_json::to_vec_pretty(self).expect("result types serialize");
            v.push(b'\n');
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(style: PromptStyle, size: usize, bleu: f64, failed: bool) -> RunRecord {
        RunRecord {
            phrase_id: 0,
            style,
            subset_size: size,
            context_size: size - 1,
            source_text: "s".into(),
            reference: "a b".into(),
            candidate: "a b".into(),
            candidate_raw: "a b".into(),
            scores: (!failed).then(|| SentenceScores { bleu, ..Default::default() }),
            latency: Duration::ZERO,
            attempt_count: 1,
            from_cache: false,
            error: failed.then(|| "boom".to_string()),
        }
    }

    #[test]
    fn mean_of_group() {
        let recs = [
            record(PromptStyle::Direct, 10, 0.2, false),
            record(PromptStyle::Direct, 10, 0.4, false),
        ];
        let agg = aggregate(&recs);
        assert!((agg[&(PromptStyle::Direct, 10)].bleu - 0.3).abs() < 1e-15);
    }

    #[test]
    fn empty_is_empty() {
        assert!(aggregate(&[]).is_empty());
        assert!(summarize(&[]).is_empty());
    }

    #[test]
    fn groups_are_disjoint() {
        let recs = [
            record(PromptStyle::Direct, 10, 1.0, false),
            record(PromptStyle::ChainOfReasoning, 10, 0.0, false),
            record(PromptStyle::Direct, 50, 0.5, false),
        ];
        let agg = aggregate(&recs);
        assert_eq!(agg.len(), 3);
        assert_eq!(agg[&(PromptStyle::Direct, 10)].bleu, 1.0);
        assert_eq!(agg[&(PromptStyle::ChainOfReasoning, 10)].bleu, 0.0);
    }

    #[test]
    fn failed_records_excluded() {
        let recs = [
            record(PromptStyle::Direct, 10, 0.6, false),
            record(PromptStyle::Direct, 10, 0.0, true),
        ];
        assert_eq!(aggregate(&recs)[&(PromptStyle::Direct, 10)].bleu, 0.6);
        let s = summarize(&recs);
        assert_eq!((s[0].scored, s[0].failed), (1, 1));
    }

    #[test]
    fn summary_order_is_style_then_size() {
        let recs = [
            record(PromptStyle::Direct, 50, 0.1, false),
            record(PromptStyle::ChainOfReasoning, 50, 0.1, false),
            record(PromptStyle::Direct, 10, 0.1, false),
        ];
        let keys: Vec<_> = summarize(&recs).iter().map(|a| (a.style, a.subset_size)).collect();
        assert_eq!(
            keys,
            [
                (PromptStyle::ChainOfReasoning, 50),
                (PromptStyle::Direct, 10),
                (PromptStyle::Direct, 50)
            ]
        );
    }

    #[test]
    fn csv_blank_scores_for_failures() {
        let bytes = records_csv(&[record(PromptStyle::Direct, 10, 0.0, true)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",,,,,,false,boom"));
    }

    #[test]
    fn echo_redacts_key() {
        let c = ExperimentConfig::new("c.csv", BackendConfig::http("http://x", "m"), "out");
        let v = config_echo(&c);
        assert_eq!(v["backend"]["api_key"], "[redacted]");
        assert_eq!(v["backend"]["api_key_env"], "NRT_API_KEY");
    }
}
