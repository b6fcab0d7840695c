//! Evaluation run records: loading, validation, and the data model every
//! other module consumes.
//!
//! Datasets are line-delimited JSON, one record per line:
//! `{query_id, question, ground_truth, answer, contexts:[{rank,text,score?}], task_type?, metadata?}`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    MalformedLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: record {query_id}: {message}")]
    Schema {
        line: usize,
        query_id: String,
        message: String,
    },
    #[error("duplicate query_id {query_id:?} on lines {first} and {second}")]
    DuplicateQueryId {
        query_id: String,
        first: usize,
        second: usize,
    },
    #[error("dataset is empty: {path}")]
    Empty { path: String },
}

/// QA task flavor carried per record so downstream metrics can gate on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Mcq,
    #[default]
    ShortAnswer,
    Extraction,
}

/// One retrieved context at a given rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub rank: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "score")]
    pub retriever_score: Option<f64>,
}

/// One query with its ground truth, ranked contexts, and generated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub question: String,
    pub ground_truth: String,
    #[serde(default)]
    pub answer: String,
    pub contexts: Vec<RetrievedContext>,
    #[serde(default)]
    pub task_type: TaskType,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl EvalRecord {
    /// Checks the per-record invariants, returning a human-readable message
    /// for the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.query_id.is_empty() {
            return Err("empty query_id".into());
        }
        if self.ground_truth.is_empty() {
            return Err("empty ground_truth".into());
        }
        for (i, ctx) in self.contexts.iter().enumerate() {
            let expected = i + 1;
            if ctx.rank != expected {
                return Err(format!(
                    "context ranks must be 1..{} with no gaps or duplicates; found rank {} at position {} (expected {})",
                    self.contexts.len(),
                    ctx.rank,
                    i + 1,
                    expected
                ));
            }
            if ctx.text.is_empty() {
                return Err(format!("context at rank {} has empty text", ctx.rank));
            }
            if let Some(s) = ctx.retriever_score {
                if !s.is_finite() {
                    return Err(format!("context at rank {} has non-finite score", ctx.rank));
                }
            }
        }
        Ok(())
    }
}

/// An immutable set of evaluation records loaded from one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub records: Vec<EvalRecord>,
    pub source_path: String,
    /// Max context count over all records.
    pub k: usize,
}

/// Severity-split findings from [`validate_eval_set`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationFinding>,
    pub warnings: Vec<ValidationFinding>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationFinding {
    pub query_id: String,
    pub message: String,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Loads a line-delimited JSON dataset, rejecting any record that violates
/// the data-model invariants. Nothing is silently repaired.
pub fn load_eval_set(path: impl AsRef<Path>) -> Result<EvalSet, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| DatasetError::MalformedLine { line: line_no, source: e })?;
        record
            .check_invariants()
            .map_err(|message| DatasetError::Schema {
                line: line_no,
                query_id: record.query_id.clone(),
                message,
            })?;
        if let Some(first) = seen.insert(record.query_id.clone(), line_no) {
            return Err(DatasetError::DuplicateQueryId {
                query_id: record.query_id,
                first,
                second: line_no,
            });
        }
        records.push(record);
    }

    if records.is_empty() {
        return Err(DatasetError::Empty {
            path: path.display().to_string(),
        });
    }
    let k = records.iter().map(|r| r.contexts.len()).max().unwrap_or(0);
    Ok(EvalSet {
        records,
        source_path: path.display().to_string(),
        k,
    })
}

/// Writes an eval set back out as line-delimited JSON.
pub fn write_eval_set(set: &EvalSet, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    for record in &set.records {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(file, "{line}").map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
    }
    Ok(())
}

/// Re-checks invariants and reports soft issues (empty answers, short
/// context lists). Findings are returned, never thrown.
pub fn validate_eval_set(set: &EvalSet) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen: HashMap<&str, ()> = HashMap::new();
    for record in &set.records {
        if let Err(message) = record.check_invariants() {
            report.errors.push(ValidationFinding {
                query_id: record.query_id.clone(),
                message,
            });
        }
        if seen.insert(&record.query_id, ()).is_some() {
            report.errors.push(ValidationFinding {
                query_id: record.query_id.clone(),
                message: "duplicate query_id".into(),
            });
        }
        if record.answer.is_empty() {
            report.warnings.push(ValidationFinding {
                query_id: record.query_id.clone(),
                message: "empty answer".into(),
            });
        }
        if record.contexts.len() < set.k {
            report.warnings.push(ValidationFinding {
                query_id: record.query_id.clone(),
                message: format!(
                    "short context list: {} contexts where k={}",
                    record.contexts.len(),
                    set.k
                ),
            });
        }
    }
    report
}
