//! Ranking metrics and fine-grained retrieval diagnostics over a hit matrix.
//!
//! All kernels are generic over the float type; rows shorter than `k` treat
//! missing ranks as non-hits, and queries with no hits contribute 0 to the
//! MRR/MAP/nDCG means rather than being excluded.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::dataset::EvalSet;
use crate::normalize::{normalize_text, NormalizationRules};
use crate::relevance::HitMatrix;

fn ratio<F: Float>(num: usize, den: usize) -> F {
    if den == 0 {
        return F::zero();
    }
    F::from(num).unwrap() / F::from(den).unwrap()
}

fn hit_at(row: &[bool], rank_idx: usize) -> bool {
    row.get(rank_idx).copied().unwrap_or(false)
}

/// Fraction of queries with at least one hit among ranks 1..=k.
pub fn recall_at_k<F: Float>(hits: &HitMatrix, k: usize) -> F {
    let n = hits
        .rows
        .iter()
        .filter(|r| r.hits.iter().take(k).any(|&h| h))
        .count();
    ratio(n, hits.rows.len())
}

/// Mean over queries of 1/(rank of first hit); 0 for no-hit queries.
pub fn mrr<F: Float>(hits: &HitMatrix) -> F {
    if hits.rows.is_empty() {
        return F::zero();
    }
    let mut sum = F::zero();
    for row in &hits.rows {
        if let Some(pos) = row.hits.iter().position(|&h| h) {
            sum = sum + F::one() / F::from(pos + 1).unwrap();
        }
    }
    sum / F::from(hits.rows.len()).unwrap()
}

/// Mean average precision with binary relevance; 0 for no-hit queries.
pub fn mean_average_precision<F: Float>(hits: &HitMatrix) -> F {
    if hits.rows.is_empty() {
        return F::zero();
    }
    let mut sum = F::zero();
    for row in &hits.rows {
        let mut hit_count = 0usize;
        let mut precision_sum = F::zero();
        for (i, &h) in row.hits.iter().enumerate() {
            if h {
                hit_count += 1;
                precision_sum = precision_sum + ratio::<F>(hit_count, i + 1);
            }
        }
        if hit_count > 0 {
            sum = sum + precision_sum / F::from(hit_count).unwrap();
        }
    }
    sum / F::from(hits.rows.len()).unwrap()
}

/// Mean nDCG with binary gains and log2(i+1) discounts; no-hit queries
/// contribute 0.
pub fn ndcg<F: Float>(hits: &HitMatrix) -> F {
    if hits.rows.is_empty() {
        return F::zero();
    }
    let two = F::from(2).unwrap();
    let mut sum = F::zero();
    for row in &hits.rows {
        let hit_count = row.hits.iter().filter(|&&h| h).count();
        if hit_count == 0 {
            continue;
        }
        let mut dcg = F::zero();
        for (i, &h) in row.hits.iter().enumerate() {
            if h {
                dcg = dcg + F::one() / F::from(i + 2).unwrap().log(two);
            }
        }
        let mut idcg = F::zero();
        for i in 0..hit_count {
            idcg = idcg + F::one() / F::from(i + 2).unwrap().log(two);
        }
        sum = sum + dcg / idcg;
    }
    sum / F::from(hits.rows.len()).unwrap()
}

/// Element i = fraction of queries whose rank-(i+1) context is a hit.
pub fn context_k_hit_rate<F: Float>(hits: &HitMatrix) -> Vec<F> {
    (0..hits.k)
        .map(|i| {
            let n = hits.rows.iter().filter(|r| hit_at(&r.hits, i)).count();
            ratio(n, hits.rows.len())
        })
        .collect()
}

/// Fraction of queries with zero hits across all ranks.
pub fn no_hit_rate<F: Float>(hits: &HitMatrix) -> F {
    let n = hits.rows.iter().filter(|r| !r.any_hit()).count();
    ratio(n, hits.rows.len())
}

/// Element i = fraction of queries where rank i+1 is the only hit.
pub fn exclusive_hit_rate<F: Float>(hits: &HitMatrix) -> Vec<F> {
    (0..hits.k)
        .map(|i| {
            let n = hits
                .rows
                .iter()
                .filter(|r| {
                    hit_at(&r.hits, i)
                        && r.hits
                            .iter()
                            .enumerate()
                            .all(|(j, &h)| j == i || !h)
                })
                .count();
            ratio(n, hits.rows.len())
        })
        .collect()
}

/// Fraction of queries where ranks i and j (1-based) are both hits.
pub fn pairwise_redundancy<F: Float>(hits: &HitMatrix, i: usize, j: usize) -> F {
    assert!(i != j, "pairwise redundancy needs two distinct ranks");
    assert!(i >= 1 && j >= 1 && i <= hits.k && j <= hits.k);
    let n = hits
        .rows
        .iter()
        .filter(|r| hit_at(&r.hits, i - 1) && hit_at(&r.hits, j - 1))
        .count();
    ratio(n, hits.rows.len())
}

/// Full co-hit matrix; the diagonal holds the per-rank hit rate.
pub fn pairwise_redundancy_matrix<F: Float>(hits: &HitMatrix) -> Vec<Vec<F>> {
    let rates = context_k_hit_rate::<F>(hits);
    (1..=hits.k)
        .map(|i| {
            (1..=hits.k)
                .map(|j| {
                    if i == j {
                        rates[i - 1]
                    } else {
                        pairwise_redundancy(hits, i, j)
                    }
                })
                .collect()
        })
        .collect()
}

/// Auxiliary textual-overlap variant of redundancy: mean Jaccard similarity
/// of the unique-token sets of the contexts at each rank pair, averaged over
/// queries where both ranks are present.
pub fn pairwise_text_overlap(set: &EvalSet, rules: &NormalizationRules) -> Vec<Vec<f64>> {
    use std::collections::BTreeSet;
    let token_sets: Vec<Vec<BTreeSet<String>>> = set
        .records
        .iter()
        .map(|r| {
            r.contexts
                .iter()
                .map(|c| {
                    crate::text::tokenize(&normalize_text(&c.text, rules))
                        .into_iter()
                        .collect()
                })
                .collect()
        })
        .collect();
    (0..set.k)
        .map(|i| {
            (0..set.k)
                .map(|j| {
                    let mut sum = 0.0;
                    let mut n = 0usize;
                    for sets in &token_sets {
                        if i < sets.len() && j < sets.len() {
                            let inter = sets[i].intersection(&sets[j]).count();
                            let union = sets[i].union(&sets[j]).count();
                            if union > 0 {
                                sum += inter as f64 / union as f64;
                                n += 1;
                            }
                        }
                    }
                    if n == 0 {
                        0.0
                    } else {
                        sum / n as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Corpus-level retrieval report with stable serialization names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at_k: f64,
    pub mrr: f64,
    pub map: f64,
    pub ndcg: f64,
    pub context_hit_rate: Vec<f64>,
    pub no_hit_rate: f64,
    pub exclusive_hit_rate: Vec<f64>,
    pub pairwise_redundancy: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairwise_text_overlap: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_context_relevancy: Option<f64>,
    pub query_count: usize,
}

pub fn compute_retrieval_report(hits: &HitMatrix) -> RetrievalReport {
    RetrievalReport {
        recall_at_k: recall_at_k(hits, hits.k),
        mrr: mrr(hits),
        map: mean_average_precision(hits),
        ndcg: ndcg(hits),
        context_hit_rate: context_k_hit_rate(hits),
        no_hit_rate: no_hit_rate(hits),
        exclusive_hit_rate: exclusive_hit_rate(hits),
        pairwise_redundancy: pairwise_redundancy_matrix(hits),
        pairwise_text_overlap: None,
        mean_context_relevancy: None,
        query_count: hits.rows.len(),
    }
}
