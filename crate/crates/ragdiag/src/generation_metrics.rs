//! Surface, structured, and semantic generation-quality metrics plus the
//! composite accuracy rule.
//!
//! Unless stated otherwise the text arguments are expected to be normalized
//! already; `list_component_f1` takes raw texts because normalization strips
//! the delimiters it splits on.

use std::collections::HashMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine, Embedder, EmbeddingError};
use crate::normalize::{normalize_text, NormalizationRules};
use crate::text::tokenize;

/// Thresholds of the composite accuracy rule; both default to 0.7.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AccuracyThresholds {
    pub list_f1_min: f64,
    pub semantic_min: f64,
}

impl Default for AccuracyThresholds {
    fn default() -> Self {
        Self {
            list_f1_min: 0.7,
            semantic_min: 0.7,
        }
    }
}

/// Per-query generation scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationScores {
    pub exact_match: bool,
    pub fuzzy_match: bool,
    pub token_f1: f64,
    pub rouge_l: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic_similarity: Option<f64>,
    pub accuracy: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_relevancy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_adherence: Option<f64>,
}

/// String equality of normalized forms.
pub fn exact_match(answer: &str, ground_truth: &str) -> bool {
    answer == ground_truth
}

/// Substring containment in either direction, on normalized forms.
pub fn fuzzy_match(answer: &str, ground_truth: &str) -> bool {
    if answer.is_empty() || ground_truth.is_empty() {
        return answer == ground_truth;
    }
    answer.contains(ground_truth) || ground_truth.contains(answer)
}

/// Harmonic mean of token precision and recall over multiset overlap.
pub fn token_f1<F: Float>(answer: &str, ground_truth: &str) -> F {
    let a = tokenize(answer);
    let g = tokenize(ground_truth);
    if a.is_empty() && g.is_empty() {
        return F::one();
    }
    if a.is_empty() || g.is_empty() {
        return F::zero();
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &a {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return F::zero();
    }
    let p = F::from(overlap).unwrap() / F::from(a.len()).unwrap();
    let r = F::from(overlap).unwrap() / F::from(g.len()).unwrap();
    F::from(2).unwrap() * p * r / (p + r)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // Two-row DP over token sequences.
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L F-measure from token-level LCS.
pub fn rouge_l<F: Float>(answer: &str, ground_truth: &str) -> F {
    let a = tokenize(answer);
    let g = tokenize(ground_truth);
    if a.is_empty() && g.is_empty() {
        return F::one();
    }
    if a.is_empty() || g.is_empty() {
        return F::zero();
    }
    let lcs = lcs_len(&a, &g);
    if lcs == 0 {
        return F::zero();
    }
    let p = F::from(lcs).unwrap() / F::from(a.len()).unwrap();
    let r = F::from(lcs).unwrap() / F::from(g.len()).unwrap();
    F::from(2).unwrap() * p * r / (p + r)
}

/// Splits a raw text into list items on commas, semicolons, newlines, bullet
/// markers, and standalone "and"; items are normalized individually.
pub fn split_list_items(raw: &str, rules: &NormalizationRules) -> Vec<String> {
    let mut items = Vec::new();
    for piece in raw.split([',', ';', '\n', '\u{2022}']) {
        for sub in regex_and().split(piece) {
            let item = normalize_text(sub.trim_start_matches(['-', '*', ' ', '\t']), rules);
            if !item.is_empty() {
                items.push(item);
            }
        }
    }
    items
}

fn regex_and() -> &'static regex::Regex {
    use std::sync::OnceLock;
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"(?i)\band\b").unwrap())
}

fn item_match_quality(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if a.contains(b) || b.contains(a) {
        let (short, long) = if a.len() < b.len() { (a, b) } else { (b, a) };
        return short.len() as f64 / long.len() as f64;
    }
    0.0
}

/// F1 over a greedy one-to-one matching of list items; two items match when
/// one fuzzy-contains the other after normalization.
pub fn list_component_f1(answer_raw: &str, ground_truth_raw: &str, rules: &NormalizationRules) -> f64 {
    let a_items = split_list_items(answer_raw, rules);
    let g_items = split_list_items(ground_truth_raw, rules);
    if a_items.is_empty() && g_items.is_empty() {
        return 1.0;
    }
    if a_items.is_empty() || g_items.is_empty() {
        return 0.0;
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in a_items.iter().enumerate() {
        for (j, g) in g_items.iter().enumerate() {
            let q = item_match_quality(a, g);
            if q > 0.0 {
                candidates.push((q, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a_items.len()];
    let mut used_g = vec![false; g_items.len()];
    let mut matches = 0usize;
    for (_, i, j) in candidates {
        if !used_a[i] && !used_g[j] {
            used_a[i] = true;
            used_g[j] = true;
            matches += 1;
        }
    }
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / a_items.len() as f64;
    let r = matches as f64 / g_items.len() as f64;
    2.0 * p * r / (p + r)
}

/// Cosine between embeddings of the two normalized texts, clamped to [0, 1]
/// for reporting.
pub fn semantic_similarity(
    answer_norm: &str,
    ground_truth_norm: &str,
    embedder: &dyn Embedder,
) -> Result<f64, EmbeddingError> {
    if answer_norm.is_empty() || ground_truth_norm.is_empty() {
        return Err(EmbeddingError::EmptyText);
    }
    let vectors = embedder.embed_batch(&[answer_norm.to_string(), ground_truth_norm.to_string()])?;
    Ok(cosine(&vectors[0], &vectors[1])?.clamp(0.0, 1.0))
}

/// The composite accuracy disjunction: exact, fuzzy, list F1 at or above its
/// threshold (when present), or semantic similarity at or above its
/// threshold (when present).
pub fn composite_accuracy(
    exact: bool,
    fuzzy: bool,
    list_f1: Option<f64>,
    semantic: Option<f64>,
    thresholds: &AccuracyThresholds,
) -> bool {
    exact
        || fuzzy
        || list_f1.is_some_and(|v| v >= thresholds.list_f1_min)
        || semantic.is_some_and(|v| v >= thresholds.semantic_min)
}

/// Scores one answer against one ground truth. `list_f1` is computed only
/// when `as_list` is set (callers gate on task type); the semantic score is
/// skipped when no embedder is configured.
pub fn score_answer(
    answer_raw: &str,
    ground_truth_raw: &str,
    rules: &NormalizationRules,
    embedder: Option<&dyn Embedder>,
    thresholds: &AccuracyThresholds,
    as_list: bool,
) -> Result<GenerationScores, EmbeddingError> {
    let answer = normalize_text(answer_raw, rules);
    let gt = normalize_text(ground_truth_raw, rules);
    let exact = exact_match(&answer, &gt);
    let fuzzy = fuzzy_match(&answer, &gt);
    let list_f1 = as_list.then(|| list_component_f1(answer_raw, ground_truth_raw, rules));
    let semantic = match embedder {
        Some(embedder) if !answer.is_empty() && !gt.is_empty() => {
            Some(semantic_similarity(&answer, &gt, embedder)?)
        }
        _ => None,
    };
    Ok(GenerationScores {
        exact_match: exact,
        fuzzy_match: fuzzy,
        token_f1: token_f1(&answer, &gt),
        rouge_l: rouge_l(&answer, &gt),
        list_f1,
        semantic_similarity: semantic,
        accuracy: composite_accuracy(exact, fuzzy, list_f1, semantic, thresholds),
        answer_relevancy: None,
        context_adherence: None,
    })
}
