//! End-to-end orchestration behind the CLI: load, validate, normalize,
//! relevance, judged metrics, generation metrics, utilization quadrants,
//! report assembly, file output. Everything here is a plain library function
//! so tests can drive the exact code paths the binary uses.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::content_key;
use crate::cue::{cue_report, CueError};
use crate::dataset::{
    load_eval_set, validate_eval_set, write_eval_set, DatasetError, EvalRecord, EvalSet, TaskType,
    ValidationReport,
};
use crate::embeddings::{Embedder, EmbeddingError, EmbeddingProviderConfig, HttpEmbedder};
use crate::generation_metrics::{score_answer, AccuracyThresholds, GenerationScores};
use crate::harness::{
    chunk_documents, load_documents, retrieve, ChunkingConfig, FusionConfig, HarnessError,
};
use crate::judge::{Judge, JudgeConfig, JudgeError, JudgeScore};
use crate::normalize::{load_rules, RulesError};
use crate::relevance::{build_hit_matrix, RelevanceError, RelevanceThresholds};
use crate::report::{
    build_report, default_report_rules, load_report_rules, render, DiagnosticReport, ReportError,
    ReportFormat, RunMetadata,
};
use crate::retrieval_metrics::{compute_retrieval_report, pairwise_text_overlap};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset failed validation:\n{0}")]
    Validation(String),
    #[error(transparent)]
    NormalizationRules(#[from] RulesError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 1 for dataset/config problems, 2 for provider failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Relevance(_)
            | PipelineError::Embedding(_)
            | PipelineError::Judge(_) => 2,
            _ => 1,
        }
    }
}

/// Which metric families the run computes. Judged metrics are opt-in since
/// they cost provider calls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricGroups {
    #[serde(default = "default_true")]
    pub retrieval: bool,
    #[serde(default = "default_true")]
    pub generation: bool,
    #[serde(default)]
    pub judged: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MetricGroups {
    fn default() -> Self {
        Self {
            retrieval: true,
            generation: true,
            judged: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_path: String,
    /// Normalization rule file; shipped defaults when absent.
    #[serde(default)]
    pub normalization_rules_path: Option<String>,
    /// Ledger rule file; shipped defaults when absent.
    #[serde(default)]
    pub report_rules_path: Option<String>,
    #[serde(default)]
    pub relevance: RelevanceThresholds,
    #[serde(default)]
    pub accuracy: AccuracyThresholds,
    #[serde(default = "default_adherence_threshold")]
    pub adherence_threshold: f64,
    #[serde(default)]
    pub embedding: Option<EmbeddingProviderConfig>,
    #[serde(default)]
    pub judge: Option<JudgeConfig>,
    #[serde(default)]
    pub metric_groups: MetricGroups,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Cache-only mode: judge/embedding calls must be cache-served or the
    /// run fails fast with the missing-key list.
    #[serde(default)]
    pub offline: bool,
}

fn default_adherence_threshold() -> f64 {
    0.7
}

fn default_output_dir() -> String {
    "runs".into()
}

fn default_parallelism() -> usize {
    4
}

impl RunConfig {
    pub fn new(dataset_path: impl Into<String>) -> Self {
        Self {
            dataset_path: dataset_path.into(),
            normalization_rules_path: None,
            report_rules_path: None,
            relevance: RelevanceThresholds::default(),
            accuracy: AccuracyThresholds::default(),
            adherence_threshold: default_adherence_threshold(),
            embedding: None,
            judge: None,
            metric_groups: MetricGroups::default(),
            chunking: ChunkingConfig::default(),
            fusion: FusionConfig::default(),
            output_dir: default_output_dir(),
            parallelism: default_parallelism(),
            offline: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let content = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&content).map_err(|e| {
            PipelineError::Validation(format!("malformed config {}: {e}", path.display()))
        })
    }
}

fn now_unix_millis() -> String {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis().to_string())
        .unwrap_or_default()
}

fn format_validation(report: &ValidationReport) -> String {
    report
        .errors
        .iter()
        .map(|f| format!("{}: {}", f.query_id, f.message))
        .collect::<Vec<_>>()
        .join("\n")
}

fn build_embedder(config: &RunConfig) -> Result<Option<HttpEmbedder>, PipelineError> {
    match &config.embedding {
        Some(embedding) => {
            let mut embedding = embedding.clone();
            embedding.offline = embedding.offline || config.offline;
            Ok(Some(HttpEmbedder::new(embedding)?))
        }
        None => Ok(None),
    }
}

/// Judges context adherence for every record, fanned out under the
/// parallelism limit. Empty answers are recorded as adherence 0 without a
/// provider call. In offline mode all missing cache keys are aggregated
/// before failing so the error lists everything the cache lacks.
fn judge_adherence(
    set: &EvalSet,
    judge: &Judge,
    parallelism: usize,
) -> Result<BTreeMap<String, JudgeScore>, PipelineError> {
    let results: Mutex<BTreeMap<String, Result<JudgeScore, JudgeError>>> =
        Mutex::new(BTreeMap::new());
    let queue: Mutex<Vec<&EvalRecord>> = Mutex::new(set.records.iter().collect());
    let workers = parallelism.max(1).min(set.records.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let record = match queue.lock().unwrap().pop() {
                    Some(r) => r,
                    None => break,
                };
                let outcome = if record.answer.is_empty() {
                    Ok(JudgeScore {
                        value: 0.0,
                        rationale: Some("empty answer; not judged".into()),
                        judge_model: judge.config.model_id.clone(),
                        prompt_hash: String::new(),
                        retry_count: 0,
                    })
                } else {
                    let contexts: Vec<String> =
                        record.contexts.iter().map(|c| c.text.clone()).collect();
                    judge.judge_context_adherence(&record.answer, &contexts)
                };
                results
                    .lock()
                    .unwrap()
                    .insert(record.query_id.clone(), outcome);
            });
        }
    });

    let mut scores = BTreeMap::new();
    let mut missing: Vec<String> = Vec::new();
    let mut first_error: Option<JudgeError> = None;
    for (query_id, outcome) in results.into_inner().unwrap() {
        match outcome {
            Ok(score) => {
                scores.insert(query_id, score);
            }
            Err(JudgeError::Offline { missing: keys }) => missing.extend(keys),
            Err(e) => first_error = first_error.or(Some(e)),
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(JudgeError::Offline { missing }.into());
    }
    if let Some(e) = first_error {
        return Err(e.into());
    }
    Ok(scores)
}

/// Full evaluation over an already-loaded dataset. Returns the assembled
/// report without touching the filesystem.
pub fn evaluate_set(set: &EvalSet, config: &RunConfig) -> Result<DiagnosticReport, PipelineError> {
    let validation = validate_eval_set(set);
    if !validation.is_valid() {
        return Err(PipelineError::Validation(format_validation(&validation)));
    }

    let rules = load_rules(
        config
            .normalization_rules_path
            .as_ref()
            .map(Path::new),
    )?;
    let report_rules = match &config.report_rules_path {
        Some(path) => load_report_rules(Path::new(path))?,
        None => default_report_rules(),
    };
    let embedder = build_embedder(config)?;
    let embedder_ref: Option<&dyn Embedder> = embedder.as_ref().map(|e| e as &dyn Embedder);

    let mut annotations: Vec<String> = validation
        .warnings
        .iter()
        .map(|f| format!("warning {}: {}", f.query_id, f.message))
        .collect();
    if embedder.is_none() {
        annotations.push(
            "no embedding provider configured: relevance cascade ran without its semantic stage \
             and semantic answer similarity was skipped"
                .into(),
        );
    }

    let hits = build_hit_matrix(set, &config.relevance, &rules, embedder_ref)?;
    let mut retrieval = compute_retrieval_report(&hits);
    retrieval.pairwise_text_overlap = Some(pairwise_text_overlap(set, &rules));

    let mut generation: BTreeMap<String, GenerationScores> = BTreeMap::new();
    for record in &set.records {
        let as_list = record.task_type == TaskType::Extraction;
        let scores = score_answer(
            &record.answer,
            &record.ground_truth,
            &rules,
            embedder_ref,
            &config.accuracy,
            as_list,
        )?;
        generation.insert(record.query_id.clone(), scores);
    }

    let adherence = if config.metric_groups.judged {
        let judge_config = config.judge.clone().ok_or_else(|| {
            PipelineError::Validation(
                "judged metrics enabled but no judge provider configured".into(),
            )
        })?;
        let mut judge_config = judge_config;
        judge_config.offline = judge_config.offline || config.offline;
        let judge = Judge::http(judge_config)?;
        Some(judge_adherence(set, &judge, config.parallelism)?)
    } else {
        None
    };

    let cue = match &adherence {
        Some(adherence) => {
            for (query_id, score) in adherence {
                if let Some(gen) = generation.get_mut(query_id) {
                    gen.context_adherence = Some(score.value);
                }
            }
            Some(
                cue_report(&hits, &generation, adherence, config.adherence_threshold)
                    .map_err(|e: CueError| PipelineError::Validation(e.to_string()))?,
            )
        }
        None => None,
    };

    let config_snapshot =
        serde_json::to_value(config).expect("run config serializes");
    let metadata = RunMetadata {
        dataset_path: set.source_path.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: now_unix_millis(),
        finished_at: now_unix_millis(),
        config: config_snapshot,
    };

    Ok(build_report(
        &hits,
        retrieval,
        &generation,
        adherence.as_ref(),
        cue,
        metadata,
        &report_rules,
        annotations,
    ))
}

/// Deterministic run directory name derived from the dataset path and config
/// snapshot, so identical runs land in (and overwrite) the same directory.
pub fn run_id(config: &RunConfig) -> String {
    let snapshot = serde_json::to_string(config).expect("run config serializes");
    content_key(&[&config.dataset_path, &snapshot])[..12].to_string()
}

#[derive(Debug)]
pub struct EvaluateOutput {
    pub report: DiagnosticReport,
    pub run_dir: PathBuf,
    pub json_path: PathBuf,
}

/// `evaluate` subcommand body: load, evaluate, write report files.
pub fn cmd_evaluate(config: &RunConfig) -> Result<EvaluateOutput, PipelineError> {
    let set = load_eval_set(&config.dataset_path)?;
    let report = evaluate_set(&set, config)?;

    let run_dir = Path::new(&config.output_dir).join(format!("run-{}", run_id(config)));
    std::fs::create_dir_all(&run_dir).map_err(|source| PipelineError::Io {
        path: run_dir.display().to_string(),
        source,
    })?;
    let mut json_path = PathBuf::new();
    for (format, name) in [
        (ReportFormat::Json, "report.json"),
        (ReportFormat::Markdown, "report.md"),
        (ReportFormat::Csv, "per_query.csv"),
    ] {
        let path = run_dir.join(name);
        let bytes = render(&report, format)?;
        std::fs::write(&path, bytes).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if format == ReportFormat::Json {
            json_path = path;
        }
    }
    Ok(EvaluateOutput {
        report,
        run_dir,
        json_path,
    })
}

/// One retrieval query: id, question, and the reference answer the eventual
/// evaluation will score against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieveQuery {
    pub query_id: String,
    pub question: String,
    pub ground_truth: String,
}

pub fn load_queries(path: &Path) -> Result<Vec<RetrieveQuery>, PipelineError> {
    let content = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut queries = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let query: RetrieveQuery = serde_json::from_str(line).map_err(|e| {
            PipelineError::Validation(format!("queries line {}: {e}", idx + 1))
        })?;
        queries.push(query);
    }
    if queries.is_empty() {
        return Err(PipelineError::Validation(format!(
            "no queries in {}",
            path.display()
        )));
    }
    Ok(queries)
}

/// `retrieve` subcommand body: chunk and index the corpus, run hybrid
/// retrieval per query, and write an eval-record-shaped file with empty
/// answers for an external generator to fill in.
pub fn cmd_retrieve(
    corpus_path: &Path,
    queries_path: &Path,
    output_path: &Path,
    config: &RunConfig,
) -> Result<(EvalSet, Vec<String>), PipelineError> {
    let docs = load_documents(corpus_path)?;
    let (corpus, mut warnings) = chunk_documents(&docs, &config.chunking)?;
    let queries = load_queries(queries_path)?;
    let embedder = build_embedder(config)?;
    let embedder_ref: Option<&dyn Embedder> = embedder.as_ref().map(|e| e as &dyn Embedder);

    let mut records = Vec::with_capacity(queries.len());
    for query in &queries {
        let contexts = retrieve(&query.question, &corpus, &config.fusion, embedder_ref)?;
        if contexts.len() < config.fusion.top_k {
            warnings.push(format!(
                "query {}: only {} of {} requested contexts",
                query.query_id,
                contexts.len(),
                config.fusion.top_k
            ));
        }
        records.push(EvalRecord {
            query_id: query.query_id.clone(),
            question: query.question.clone(),
            ground_truth: query.ground_truth.clone(),
            answer: String::new(),
            contexts,
            task_type: TaskType::default(),
            metadata: BTreeMap::new(),
        });
    }
    let set = EvalSet {
        k: records.iter().map(|r| r.contexts.len()).max().unwrap_or(0),
        records,
        source_path: output_path.display().to_string(),
    };
    write_eval_set(&set, output_path)?;
    Ok((set, warnings))
}

/// `validate` subcommand body.
pub fn cmd_validate(path: &Path) -> Result<ValidationReport, PipelineError> {
    let set = load_eval_set(path)?;
    Ok(validate_eval_set(&set))
}
