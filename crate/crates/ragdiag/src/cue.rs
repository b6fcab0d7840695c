//! Context Utilization Efficiency: cross-reference retrieval success, answer
//! correctness, and judged adherence into diagnostic quadrants.
//!
//! The four named quadrants follow the (hit, correct, adherence) definitions
//! exactly; the two mixed cells the quadrant prose leaves unnamed are
//! reported explicitly as residuals instead of being forced into a quadrant,
//! so the counts always partition the query set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation_metrics::GenerationScores;
use crate::judge::JudgeScore;
use crate::relevance::HitMatrix;

#[derive(Debug, Error)]
pub enum CueError {
    #[error("adherence {0} outside [0, 1]")]
    AdherenceOutOfRange(f64),
    #[error("query sets differ; only in hits: {only_in_hits:?}, only in generation: {only_in_gen:?}, only in adherence: {only_in_adherence:?}")]
    QuerySetMismatch {
        only_in_hits: Vec<String>,
        only_in_gen: Vec<String>,
        only_in_adherence: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueQuadrant {
    EffectiveUse,
    InformationBlindness,
    LuckyGuess,
    CorrectRejection,
    /// Hit, correct answer, but adherence below threshold.
    ResidualHitCorrectLowAdherence,
    /// No hit, incorrect answer, yet adherence at or above threshold.
    ResidualNoHitIncorrectHighAdherence,
}

/// Assigns one query to its cell of the (hit, correct, adherence) cube.
pub fn classify_query(
    retrieval_hit: bool,
    answer_correct: bool,
    adherence: f64,
    threshold: f64,
) -> Result<CueQuadrant, CueError> {
    if !(0.0..=1.0).contains(&adherence) {
        return Err(CueError::AdherenceOutOfRange(adherence));
    }
    let adherent = adherence >= threshold;
    Ok(match (retrieval_hit, answer_correct, adherent) {
        (true, true, true) => CueQuadrant::EffectiveUse,
        (true, false, _) => CueQuadrant::InformationBlindness,
        (false, true, _) => CueQuadrant::LuckyGuess,
        (false, false, false) => CueQuadrant::CorrectRejection,
        (true, true, false) => CueQuadrant::ResidualHitCorrectLowAdherence,
        (false, false, true) => CueQuadrant::ResidualNoHitIncorrectHighAdherence,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CueReport {
    pub per_query: BTreeMap<String, CueQuadrant>,
    pub effective_use: f64,
    pub information_blindness: f64,
    pub lucky_guess: f64,
    pub correct_rejection: f64,
    pub residual_cells: BTreeMap<String, f64>,
    pub accuracy: f64,
    pub context_hit_rate: f64,
    /// accuracy − context_hit_rate.
    pub accuracy_fallacy_gap: f64,
    pub adherence_threshold: f64,
    pub mean_adherence: f64,
    pub query_count: usize,
}

impl CueReport {
    pub fn quadrant_count(&self, quadrant: CueQuadrant) -> usize {
        self.per_query.values().filter(|&&q| q == quadrant).count()
    }
}

fn key_set<'a, I: Iterator<Item = &'a String>>(iter: I) -> Vec<String> {
    let mut v: Vec<String> = iter.cloned().collect();
    v.sort();
    v
}

/// Classifies every query and aggregates proportions, accuracy, any-hit
/// rate, and the accuracy-fallacy gap.
pub fn cue_report(
    hits: &HitMatrix,
    generation: &BTreeMap<String, GenerationScores>,
    adherence: &BTreeMap<String, JudgeScore>,
    threshold: f64,
) -> Result<CueReport, CueError> {
    let hit_ids = key_set(hits.rows.iter().map(|r| &r.query_id));
    let gen_ids = key_set(generation.keys());
    let adh_ids = key_set(adherence.keys());
    if hit_ids != gen_ids || hit_ids != adh_ids {
        let diff = |a: &[String], b: &[String], c: &[String]| -> Vec<String> {
            a.iter()
                .filter(|id| !b.contains(id) || !c.contains(id))
                .cloned()
                .collect()
        };
        return Err(CueError::QuerySetMismatch {
            only_in_hits: diff(&hit_ids, &gen_ids, &adh_ids),
            only_in_gen: diff(&gen_ids, &hit_ids, &adh_ids),
            only_in_adherence: diff(&adh_ids, &hit_ids, &gen_ids),
        });
    }

    let n = hits.rows.len();
    let mut per_query = BTreeMap::new();
    let mut correct_count = 0usize;
    let mut hit_count = 0usize;
    let mut adherence_sum = 0.0;
    for row in &hits.rows {
        let gen = &generation[&row.query_id];
        let adh = &adherence[&row.query_id];
        let hit = row.any_hit();
        if gen.accuracy {
            correct_count += 1;
        }
        if hit {
            hit_count += 1;
        }
        adherence_sum += adh.value;
        let quadrant = classify_query(hit, gen.accuracy, adh.value, threshold)?;
        per_query.insert(row.query_id.clone(), quadrant);
    }

    let frac = |quadrant: CueQuadrant| -> f64 {
        per_query.values().filter(|&&q| q == quadrant).count() as f64 / n as f64
    };
    let mut residual_cells = BTreeMap::new();
    residual_cells.insert(
        "hit_correct_low_adherence".to_string(),
        frac(CueQuadrant::ResidualHitCorrectLowAdherence),
    );
    residual_cells.insert(
        "no_hit_incorrect_high_adherence".to_string(),
        frac(CueQuadrant::ResidualNoHitIncorrectHighAdherence),
    );

    let accuracy = correct_count as f64 / n as f64;
    let context_hit_rate = hit_count as f64 / n as f64;
    Ok(CueReport {
        effective_use: frac(CueQuadrant::EffectiveUse),
        information_blindness: frac(CueQuadrant::InformationBlindness),
        lucky_guess: frac(CueQuadrant::LuckyGuess),
        correct_rejection: frac(CueQuadrant::CorrectRejection),
        residual_cells,
        accuracy,
        context_hit_rate,
        accuracy_fallacy_gap: accuracy - context_hit_rate,
        adherence_threshold: threshold,
        mean_adherence: adherence_sum / n as f64,
        query_count: n,
        per_query,
    })
}
