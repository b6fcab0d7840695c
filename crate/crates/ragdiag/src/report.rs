//! Diagnostic report assembly: a rule-driven metric ledger plus the raw
//! retrieval, generation, and utilization aggregates, rendered as JSON,
//! Markdown, or per-query CSV.
//!
//! Interpretation and insight text is never free-generated; every ledger row
//! comes from a declarative rule table shipped as an editable JSON file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cue::CueReport;
use crate::generation_metrics::GenerationScores;
use crate::judge::JudgeScore;
use crate::relevance::HitMatrix;
use crate::retrieval_metrics::RetrievalReport;

pub const DEFAULT_REPORT_RULES: &str = include_str!("../assets/default_report_rules.json");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed rule file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("csv rendering failed: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Ok,
    Warn,
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Eq => (value - threshold).abs() < 1e-9,
        }
    }
}

/// Secondary guard so a rule can key off a second metric (e.g. a low
/// exclusive-hit rate only matters when that rank does hit sometimes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleCondition {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRule {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<RuleCondition>,
    pub interpretation: String,
    pub insight: String,
    pub severity: Severity,
}

pub fn default_report_rules() -> Vec<ReportRule> {
    serde_json::from_str(DEFAULT_REPORT_RULES).expect("shipped rule file is valid")
}

pub fn load_report_rules(path: &Path) -> Result<Vec<ReportRule>, ReportError> {
    let content = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&content)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub metric_name: String,
    pub value: f64,
    pub interpretation: String,
    pub actionable_insight: String,
    pub severity: Severity,
}

/// Corpus-level aggregate of per-query generation scores. Optional means are
/// taken over the queries where the underlying score exists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationAggregate {
    pub exact_match_rate: f64,
    pub fuzzy_match_rate: f64,
    pub mean_token_f1: f64,
    pub mean_rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_list_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_semantic_similarity: Option<f64>,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_answer_relevancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_context_adherence: Option<f64>,
    pub query_count: usize,
}

pub fn aggregate_generation(scores: &BTreeMap<String, GenerationScores>) -> GenerationAggregate {
    let n = scores.len();
    let rate = |f: &dyn Fn(&GenerationScores) -> bool| -> f64 {
        if n == 0 {
            return 0.0;
        }
        scores.values().filter(|s| f(s)).count() as f64 / n as f64
    };
    let mean = |f: &dyn Fn(&GenerationScores) -> f64| -> f64 {
        if n == 0 {
            return 0.0;
        }
        scores.values().map(f).sum::<f64>() / n as f64
    };
    let opt_mean = |f: &dyn Fn(&GenerationScores) -> Option<f64>| -> Option<f64> {
        let values: Vec<f64> = scores.values().filter_map(f).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    GenerationAggregate {
        exact_match_rate: rate(&|s| s.exact_match),
        fuzzy_match_rate: rate(&|s| s.fuzzy_match),
        mean_token_f1: mean(&|s| s.token_f1),
        mean_rouge_l: mean(&|s| s.rouge_l),
        mean_list_f1: opt_mean(&|s| s.list_f1),
        mean_semantic_similarity: opt_mean(&|s| s.semantic_similarity),
        accuracy: rate(&|s| s.accuracy),
        mean_answer_relevancy: opt_mean(&|s| s.answer_relevancy),
        mean_context_adherence: opt_mean(&|s| s.context_adherence),
        query_count: n,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset_path: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// Config snapshot sufficient to re-run the evaluation bit-identically
    /// given warm caches.
    pub config: serde_json::Value,
}

/// One CSV row per query for downstream plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerQueryRow {
    pub query_id: String,
    /// Hit flags per rank, e.g. "TFF".
    pub hits: String,
    pub any_hit: bool,
    pub exact_match: bool,
    pub accuracy: bool,
    pub token_f1: f64,
    pub rouge_l: f64,
    pub list_f1: Option<f64>,
    pub semantic_similarity: Option<f64>,
    pub adherence: Option<f64>,
    pub quadrant: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub run_metadata: RunMetadata,
    pub retrieval: RetrievalReport,
    pub generation: GenerationAggregate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cue: Option<CueReport>,
    pub ledger: Vec<LedgerRow>,
    pub per_query: Vec<PerQueryRow>,
    /// Run-level caveats, e.g. a disabled cascade stage.
    #[serde(default)]
    pub annotations: Vec<String>,
}

/// Flattens the aggregates into the named scalar values the rule table can
/// reference. Per-rank metrics get `_N` suffixes (1-based ranks).
pub fn metric_values(
    retrieval: &RetrievalReport,
    generation: &GenerationAggregate,
    cue: Option<&CueReport>,
) -> BTreeMap<String, f64> {
    let mut values = BTreeMap::new();
    values.insert("recall_at_k".into(), retrieval.recall_at_k);
    values.insert("mrr".into(), retrieval.mrr);
    values.insert("map".into(), retrieval.map);
    values.insert("ndcg".into(), retrieval.ndcg);
    values.insert("no_hit_rate".into(), retrieval.no_hit_rate);
    for (i, &v) in retrieval.context_hit_rate.iter().enumerate() {
        values.insert(format!("context_hit_rate_{}", i + 1), v);
    }
    for (i, &v) in retrieval.exclusive_hit_rate.iter().enumerate() {
        values.insert(format!("exclusive_hit_rate_{}", i + 1), v);
    }
    for (i, row) in retrieval.pairwise_redundancy.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i < j {
                values.insert(format!("pairwise_redundancy_{}_{}", i + 1, j + 1), v);
            }
        }
    }
    values.insert("exact_match_rate".into(), generation.exact_match_rate);
    values.insert("mean_token_f1".into(), generation.mean_token_f1);
    values.insert("mean_rouge_l".into(), generation.mean_rouge_l);
    values.insert("accuracy".into(), generation.accuracy);
    if let Some(v) = generation.mean_answer_relevancy {
        values.insert("mean_answer_relevancy".into(), v);
    }
    if let Some(cue) = cue {
        values.insert("effective_use".into(), cue.effective_use);
        values.insert("information_blindness".into(), cue.information_blindness);
        values.insert("lucky_guess".into(), cue.lucky_guess);
        values.insert("correct_rejection".into(), cue.correct_rejection);
        values.insert("accuracy_fallacy_gap".into(), cue.accuracy_fallacy_gap);
        values.insert("any_context_hit_rate".into(), cue.context_hit_rate);
        values.insert("mean_context_adherence".into(), cue.mean_adherence);
    } else if let Some(v) = generation.mean_context_adherence {
        values.insert("mean_context_adherence".into(), v);
    }
    values
}

/// Evaluates the rule table: ledger rows appear in rule-file order (first
/// occurrence of each metric); within a metric the first rule whose condition
/// and optional guard hold wins. Metrics absent from the value map are
/// skipped; a metric with rules but no matching rule yields no row.
pub fn evaluate_rules(rules: &[ReportRule], values: &BTreeMap<String, f64>) -> Vec<LedgerRow> {
    let mut metric_order: Vec<&str> = Vec::new();
    for rule in rules {
        if !metric_order.contains(&rule.metric.as_str()) {
            metric_order.push(&rule.metric);
        }
    }
    let mut ledger = Vec::new();
    for metric in metric_order {
        let Some(&value) = values.get(metric) else { continue };
        let chosen = rules.iter().find(|r| {
            r.metric == metric
                && r.comparator.holds(value, r.threshold)
                && r.when.as_ref().is_none_or(|c| {
                    values
                        .get(&c.metric)
                        .is_some_and(|&g| c.comparator.holds(g, c.threshold))
                })
        });
        if let Some(rule) = chosen {
            ledger.push(LedgerRow {
                metric_name: metric.to_string(),
                value,
                interpretation: rule.interpretation.clone(),
                actionable_insight: rule.insight.clone(),
                severity: rule.severity,
            });
        }
    }
    ledger
}

fn per_query_rows(
    hits: &HitMatrix,
    generation: &BTreeMap<String, GenerationScores>,
    adherence: Option<&BTreeMap<String, JudgeScore>>,
    cue: Option<&CueReport>,
) -> Vec<PerQueryRow> {
    hits.rows
        .iter()
        .map(|row| {
            let gen = generation.get(&row.query_id);
            PerQueryRow {
                query_id: row.query_id.clone(),
                hits: row
                    .hits
                    .iter()
                    .map(|&h| if h { 'T' } else { 'F' })
                    .collect(),
                any_hit: row.any_hit(),
                exact_match: gen.is_some_and(|g| g.exact_match),
                accuracy: gen.is_some_and(|g| g.accuracy),
                token_f1: gen.map_or(0.0, |g| g.token_f1),
                rouge_l: gen.map_or(0.0, |g| g.rouge_l),
                list_f1: gen.and_then(|g| g.list_f1),
                semantic_similarity: gen.and_then(|g| g.semantic_similarity),
                adherence: adherence.and_then(|m| m.get(&row.query_id)).map(|s| s.value),
                quadrant: cue.and_then(|c| c.per_query.get(&row.query_id)).map(|q| {
                    serde_json::to_value(q)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default()
                }),
            }
        })
        .collect()
}

/// Assembles the full report; ledger text comes exclusively from `rules`.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    hits: &HitMatrix,
    retrieval: RetrievalReport,
    generation: &BTreeMap<String, GenerationScores>,
    adherence: Option<&BTreeMap<String, JudgeScore>>,
    cue: Option<CueReport>,
    metadata: RunMetadata,
    rules: &[ReportRule],
    annotations: Vec<String>,
) -> DiagnosticReport {
    let aggregate = aggregate_generation(generation);
    let values = metric_values(&retrieval, &aggregate, cue.as_ref());
    let ledger = evaluate_rules(rules, &values);
    let per_query = per_query_rows(hits, generation, adherence, cue.as_ref());
    DiagnosticReport {
        run_metadata: metadata,
        retrieval,
        generation: aggregate,
        cue,
        ledger,
        per_query,
        annotations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

fn severity_label(s: Severity) -> &'static str {
    match s {
        Severity::Ok => "ok",
        Severity::Warn => "warn",
        Severity::Critical => "critical",
    }
}

fn render_markdown(report: &DiagnosticReport) -> String {
    let mut out = String::new();
    out.push_str("# Diagnostic report\n\n");
    out.push_str(&format!(
        "Dataset: `{}` ({} queries)\n\n",
        report.run_metadata.dataset_path, report.retrieval.query_count
    ));
    for note in &report.annotations {
        out.push_str(&format!("> {note}\n\n"));
    }
    out.push_str("| Metric | Value | Interpretation | Actionable Insight | Severity |\n");
    out.push_str("|---|---|---|---|---|\n");
    for row in &report.ledger {
        out.push_str(&format!(
            "| {} | {:.3} | {} | {} | {} |\n",
            row.metric_name,
            row.value,
            row.interpretation,
            row.actionable_insight,
            severity_label(row.severity)
        ));
    }
    out.push_str(&format!(
        "\nRecall@k {:.3} | MRR {:.3} | MAP {:.3} | nDCG {:.3} | accuracy {:.3}\n",
        report.retrieval.recall_at_k,
        report.retrieval.mrr,
        report.retrieval.map,
        report.retrieval.ndcg,
        report.generation.accuracy
    ));
    out
}

fn render_csv(report: &DiagnosticReport) -> Result<Vec<u8>, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "query_id",
        "hits",
        "any_hit",
        "exact_match",
        "accuracy",
        "token_f1",
        "rouge_l",
        "list_f1",
        "semantic_similarity",
        "adherence",
        "quadrant",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &report.per_query {
        writer.write_record([
            row.query_id.clone(),
            row.hits.clone(),
            row.any_hit.to_string(),
            row.exact_match.to_string(),
            row.accuracy.to_string(),
            row.token_f1.to_string(),
            row.rouge_l.to_string(),
            opt(row.list_f1),
            opt(row.semantic_similarity),
            opt(row.adherence),
            row.quadrant.clone().unwrap_or_default(),
        ])?;
    }
    Ok(writer
        .into_inner()
        .expect("csv writer over Vec cannot fail to flush"))
}

/// Serializes the report. JSON is the canonical machine format with stable
/// key order; Markdown renders the ledger; CSV emits per-query rows.
pub fn render(report: &DiagnosticReport, format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(report)?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        ReportFormat::Markdown => Ok(render_markdown(report).into_bytes()),
        ReportFormat::Csv => render_csv(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval_metrics::compute_retrieval_report;

    fn scores(correct: bool) -> GenerationScores {
        GenerationScores {
            exact_match: correct,
            fuzzy_match: correct,
            token_f1: if correct { 1.0 } else { 0.0 },
            rouge_l: if correct { 1.0 } else { 0.0 },
            list_f1: None,
            semantic_similarity: None,
            accuracy: correct,
            answer_relevancy: None,
            context_adherence: None,
        }
    }

    fn adherence(value: f64) -> JudgeScore {
        JudgeScore {
            value,
            rationale: None,
            judge_model: "mock".into(),
            prompt_hash: "h".into(),
            retry_count: 0,
        }
    }

    fn metadata() -> RunMetadata {
        RunMetadata {
            dataset_path: "fixture.jsonl".into(),
            tool_version: "0.0.0".into(),
            started_at: "t0".into(),
            finished_at: "t1".into(),
            config: serde_json::json!({}),
        }
    }

    fn perfect_inputs(
        n: usize,
    ) -> (
        HitMatrix,
        BTreeMap<String, GenerationScores>,
        BTreeMap<String, JudgeScore>,
    ) {
        let hits = HitMatrix::from_bool_rows(
            (0..n)
                .map(|i| (format!("q{i:02}"), vec![true, false, false]))
                .collect(),
            3,
        );
        let gen = (0..n).map(|i| (format!("q{i:02}"), scores(true))).collect();
        let adh = (0..n).map(|i| (format!("q{i:02}"), adherence(0.95))).collect();
        (hits, gen, adh)
    }

    fn build_perfect() -> DiagnosticReport {
        let (hits, gen, adh) = perfect_inputs(6);
        let cue = crate::cue::cue_report(&hits, &gen, &adh, 0.7).unwrap();
        build_report(
            &hits,
            compute_retrieval_report(&hits),
            &gen,
            Some(&adh),
            Some(cue),
            metadata(),
            &default_report_rules(),
            Vec::new(),
        )
    }

    #[test]
    fn all_perfect_run_every_row_ok() {
        let report = build_perfect();
        assert!(!report.ledger.is_empty());
        for row in &report.ledger {
            assert_eq!(row.severity, Severity::Ok, "metric {}", row.metric_name);
        }
    }

    #[test]
    fn lucky_guess_above_quarter_is_critical_with_coverage_insight() {
        let values: BTreeMap<String, f64> = [("lucky_guess".to_string(), 0.339)].into();
        let ledger = evaluate_rules(&default_report_rules(), &values);
        assert_eq!(ledger.len(), 1);
        assert_eq!(ledger[0].severity, Severity::Critical);
        assert_eq!(ledger[0].actionable_insight, "Improve retriever coverage.");
    }

    #[test]
    fn information_blindness_row_matches_declared_text() {
        let values: BTreeMap<String, f64> = [("information_blindness".to_string(), 0.085)].into();
        let ledger = evaluate_rules(&default_report_rules(), &values);
        assert_eq!(
            ledger[0].actionable_insight,
            "Refine generation prompt for extraction."
        );
        assert_eq!(ledger[0].severity, Severity::Warn);
    }

    #[test]
    fn redundancy_rule_fires_above_fifteen_percent() {
        let values: BTreeMap<String, f64> =
            [("pairwise_redundancy_1_2".to_string(), 0.22)].into();
        let ledger = evaluate_rules(&default_report_rules(), &values);
        assert_eq!(
            ledger[0].actionable_insight,
            "Implement Maximum Marginal Relevance (MMR) for diversity."
        );
    }

    #[test]
    fn exclusive_hit_guard_requires_rank_two_hits() {
        let rules = default_report_rules();
        let mut values: BTreeMap<String, f64> = [
            ("exclusive_hit_rate_2".to_string(), 0.0),
            ("context_hit_rate_2".to_string(), 0.0),
        ]
        .into();
        let ledger = evaluate_rules(&rules, &values);
        assert_eq!(ledger[0].severity, Severity::Ok);
        values.insert("context_hit_rate_2".into(), 0.29);
        let ledger = evaluate_rules(&rules, &values);
        assert_eq!(ledger[0].actionable_insight, "Implement diverse re-ranking.");
    }

    #[test]
    fn adherence_rule_boundary_inclusive() {
        let values: BTreeMap<String, f64> = [("mean_context_adherence".to_string(), 0.8)].into();
        let ledger = evaluate_rules(&default_report_rules(), &values);
        assert_eq!(ledger[0].actionable_insight, "No Action");
        assert_eq!(
            ledger[0].interpretation,
            "Generator is highly faithful to context."
        );
    }

    #[test]
    fn rule_evaluation_is_deterministic() {
        let report_a = build_perfect();
        let report_b = build_perfect();
        assert_eq!(report_a.ledger, report_b.ledger);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let report = build_perfect();
        let bytes = render(&report, ReportFormat::Json).unwrap();
        let parsed: DiagnosticReport = serde_json::from_slice(&bytes).unwrap();
        let again = render(&parsed, ReportFormat::Json).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn markdown_has_one_table_row_per_ledger_row() {
        let report = build_perfect();
        let md = String::from_utf8(render(&report, ReportFormat::Markdown).unwrap()).unwrap();
        let table_rows = md
            .lines()
            .filter(|l| l.starts_with("| ") && !l.starts_with("| Metric"))
            .count();
        assert_eq!(table_rows, report.ledger.len());
    }

    #[test]
    fn csv_row_count_is_query_count_plus_header() {
        let report = build_perfect();
        let bytes = render(&report, ReportFormat::Csv).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), report.per_query.len() + 1);
    }

    #[test]
    fn shipped_rule_file_parses() {
        assert!(!default_report_rules().is_empty());
    }
}
