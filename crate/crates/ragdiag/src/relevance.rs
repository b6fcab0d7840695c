//! The cascading binary relevance function: does a retrieved context contain
//! the correct answer?
//!
//! The cascade short-circuits: exact substring match, then token-level
//! overlap against the ground-truth token set (>= 0.80 by default), then
//! max sentence-level embedding cosine (>= 0.75 by default). Stages one and
//! two never touch the embedding provider.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::EvalSet;
use crate::embeddings::{cosine, Embedder, EmbeddingError};
use crate::normalize::{normalize_text, NormalizationRules};
use crate::text::{split_sentences, tokenize};

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("embedding failure for query {query_id} rank {rank}: {source}")]
    Embedding {
        query_id: String,
        rank: usize,
        #[source]
        source: EmbeddingError,
    },
    #[error(transparent)]
    Provider(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RelevanceThresholds {
    pub token_overlap_min: f64,
    pub semantic_min: f64,
}

impl Default for RelevanceThresholds {
    fn default() -> Self {
        Self {
            token_overlap_min: 0.80,
            semantic_min: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceLevel {
    ExactSubstring,
    TokenOverlap,
    Semantic,
    None,
}

/// Outcome of the cascade for one (context, ground truth) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVerdict {
    pub hit: bool,
    pub level: RelevanceLevel,
    /// 1.0 for exact, overlap ratio for token, cosine for semantic, and the
    /// max observed score when nothing fired.
    pub score: f64,
}

/// Per-query hit vectors aligned with context ranks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HitRow {
    pub query_id: String,
    pub hits: Vec<bool>,
    pub verdicts: Vec<RelevanceVerdict>,
}

impl HitRow {
    pub fn any_hit(&self) -> bool {
        self.hits.iter().any(|&h| h)
    }
}

/// The relevance function materialized over every (query, rank) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HitMatrix {
    pub k: usize,
    pub rows: Vec<HitRow>,
}

impl HitMatrix {
    pub fn from_bool_rows(rows: Vec<(String, Vec<bool>)>, k: usize) -> Self {
        let rows = rows
            .into_iter()
            .map(|(query_id, hits)| {
                let verdicts = hits
                    .iter()
                    .map(|&hit| RelevanceVerdict {
                        hit,
                        level: if hit {
                            RelevanceLevel::ExactSubstring
                        } else {
                            RelevanceLevel::None
                        },
                        score: if hit { 1.0 } else { 0.0 },
                    })
                    .collect();
                HitRow { query_id, hits, verdicts }
            })
            .collect();
        Self { k, rows }
    }

    pub fn query_count(&self) -> usize {
        self.rows.len()
    }

    pub fn any_hit_count(&self) -> usize {
        self.rows.iter().filter(|r| r.any_hit()).count()
    }

    pub fn any_hit_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.any_hit_count() as f64 / self.rows.len() as f64
    }
}

/// |unique tokens(GT) ∩ unique tokens(context)| / |unique tokens(GT)|.
/// Inputs are expected to be normalized already.
pub fn token_overlap(ground_truth: &str, context: &str) -> f64 {
    let gt: BTreeSet<String> = tokenize(ground_truth).into_iter().collect();
    if gt.is_empty() {
        return 0.0;
    }
    let ctx: BTreeSet<String> = tokenize(context).into_iter().collect();
    let shared = gt.iter().filter(|t| ctx.contains(*t)).count();
    shared as f64 / gt.len() as f64
}

/// Cascade over pre-normalized texts. `sentences` are the normalized
/// sentences of the context, used only by the semantic stage.
fn cascade(
    gt_norm: &str,
    ctx_norm: &str,
    sentences: &[String],
    thresholds: &RelevanceThresholds,
    embedder: Option<&dyn Embedder>,
) -> Result<RelevanceVerdict, EmbeddingError> {
    if !gt_norm.is_empty() && ctx_norm.contains(gt_norm) {
        return Ok(RelevanceVerdict {
            hit: true,
            level: RelevanceLevel::ExactSubstring,
            score: 1.0,
        });
    }
    let overlap = token_overlap(gt_norm, ctx_norm);
    if overlap >= thresholds.token_overlap_min {
        return Ok(RelevanceVerdict {
            hit: true,
            level: RelevanceLevel::TokenOverlap,
            score: overlap,
        });
    }
    let Some(embedder) = embedder else {
        // Semantic stage disabled; record the best score observed so far.
        return Ok(RelevanceVerdict {
            hit: false,
            level: RelevanceLevel::None,
            score: overlap,
        });
    };
    let candidates: Vec<String> = sentences
        .iter()
        .filter(|s| !s.is_empty())
        .cloned()
        .collect();
    if gt_norm.is_empty() || candidates.is_empty() {
        return Ok(RelevanceVerdict {
            hit: false,
            level: RelevanceLevel::None,
            score: overlap,
        });
    }
    let mut texts = vec![gt_norm.to_string()];
    texts.extend(candidates);
    let vectors = embedder.embed_batch(&texts)?;
    let gt_vec = &vectors[0];
    let mut max_cos = f64::NEG_INFINITY;
    for sentence_vec in &vectors[1..] {
        let c = cosine(gt_vec, sentence_vec)?;
        max_cos = max_cos.max(c);
    }
    if max_cos >= thresholds.semantic_min {
        Ok(RelevanceVerdict {
            hit: true,
            level: RelevanceLevel::Semantic,
            score: max_cos,
        })
    } else {
        Ok(RelevanceVerdict {
            hit: false,
            level: RelevanceLevel::None,
            score: max_cos.max(overlap),
        })
    }
}

/// Normalized sentences of a raw context: segmentation happens on the raw
/// text (normalization strips sentence terminators), each sentence is then
/// normalized individually.
pub fn context_sentences(context_raw: &str, rules: &NormalizationRules) -> Vec<String> {
    split_sentences(context_raw)
        .iter()
        .map(|s| normalize_text(s, rules))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Full cascade over raw texts; normalizes internally.
pub fn relevance(
    context: &str,
    ground_truth: &str,
    thresholds: &RelevanceThresholds,
    rules: &NormalizationRules,
    embedder: Option<&dyn Embedder>,
) -> Result<RelevanceVerdict, EmbeddingError> {
    let gt_norm = normalize_text(ground_truth, rules);
    let ctx_norm = normalize_text(context, rules);
    let sentences = context_sentences(context, rules);
    cascade(&gt_norm, &ctx_norm, &sentences, thresholds, embedder)
}

/// Computes a verdict for every (record, rank). Stages 1-2 run first for all
/// pairs; the pairs that reach the semantic stage are embedded in one
/// deduplicated batch.
pub fn build_hit_matrix(
    set: &EvalSet,
    thresholds: &RelevanceThresholds,
    rules: &NormalizationRules,
    embedder: Option<&dyn Embedder>,
) -> Result<HitMatrix, RelevanceError> {
    struct Pending {
        row: usize,
        rank_idx: usize,
        gt_norm: String,
        sentences: Vec<String>,
        overlap: f64,
    }

    let mut rows: Vec<HitRow> = Vec::with_capacity(set.records.len());
    let mut pending: Vec<Pending> = Vec::new();

    for (row_idx, record) in set.records.iter().enumerate() {
        let gt_norm = normalize_text(&record.ground_truth, rules);
        let mut verdicts = Vec::with_capacity(record.contexts.len());
        for (rank_idx, ctx) in record.contexts.iter().enumerate() {
            let ctx_norm = normalize_text(&ctx.text, rules);
            if !gt_norm.is_empty() && ctx_norm.contains(&gt_norm) {
                verdicts.push(RelevanceVerdict {
                    hit: true,
                    level: RelevanceLevel::ExactSubstring,
                    score: 1.0,
                });
                continue;
            }
            let overlap = token_overlap(&gt_norm, &ctx_norm);
            if overlap >= thresholds.token_overlap_min {
                verdicts.push(RelevanceVerdict {
                    hit: true,
                    level: RelevanceLevel::TokenOverlap,
                    score: overlap,
                });
                continue;
            }
            // Placeholder; resolved below if an embedder is available.
            verdicts.push(RelevanceVerdict {
                hit: false,
                level: RelevanceLevel::None,
                score: overlap,
            });
            if embedder.is_some() {
                let sentences = context_sentences(&ctx.text, rules);
                if !gt_norm.is_empty() && !sentences.is_empty() {
                    pending.push(Pending {
                        row: row_idx,
                        rank_idx,
                        gt_norm: gt_norm.clone(),
                        sentences,
                        overlap,
                    });
                }
            }
        }
        let hits = verdicts.iter().map(|v| v.hit).collect();
        rows.push(HitRow {
            query_id: record.query_id.clone(),
            hits,
            verdicts,
        });
    }

    if let Some(embedder) = embedder {
        if !pending.is_empty() {
            // One deduplicated embedding batch for all pending texts.
            let mut unique: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            let intern = |t: &str, unique: &mut Vec<String>, index: &mut HashMap<String, usize>| {
                if let Some(&i) = index.get(t) {
                    i
                } else {
                    unique.push(t.to_string());
                    index.insert(t.to_string(), unique.len() - 1);
                    unique.len() - 1
                }
            };
            for p in &pending {
                intern(&p.gt_norm, &mut unique, &mut index);
                for s in &p.sentences {
                    intern(s, &mut unique, &mut index);
                }
            }
            let vectors = embedder.embed_batch(&unique).map_err(|source| {
                let p = &pending[0];
                RelevanceError::Embedding {
                    query_id: rows[p.row].query_id.clone(),
                    rank: p.rank_idx + 1,
                    source,
                }
            })?;
            for p in &pending {
                let gt_vec = &vectors[index[&p.gt_norm]];
                let mut max_cos = f64::NEG_INFINITY;
                for s in &p.sentences {
                    let c = cosine(gt_vec, &vectors[index[s]]).map_err(|source| {
                        RelevanceError::Embedding {
                            query_id: rows[p.row].query_id.clone(),
                            rank: p.rank_idx + 1,
                            source,
                        }
                    })?;
                    max_cos = max_cos.max(c);
                }
                let verdict = if max_cos >= thresholds.semantic_min {
                    RelevanceVerdict {
                        hit: true,
                        level: RelevanceLevel::Semantic,
                        score: max_cos,
                    }
                } else {
                    RelevanceVerdict {
                        hit: false,
                        level: RelevanceLevel::None,
                        score: max_cos.max(p.overlap),
                    }
                };
                rows[p.row].verdicts[p.rank_idx] = verdict;
                rows[p.row].hits[p.rank_idx] = verdict.hit;
            }
        }
    }

    Ok(HitMatrix { k: set.k, rows })
}
