//! From option logits to scores: softmax, level distributions, fair
//! averages, and the aggregation hierarchy up to a candidate's overall
//! score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::OptionLogits;
use crate::bank::AspectId;
use crate::error::{NlaError, Result};
use crate::prompting::Prompt;

/// Softmax probability vector over the levels a prompt offered, in canonical
/// ascending level order regardless of how the descriptors were presented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub response_id: String,
    pub aspect: AspectId,
    pub ordering_index: u32,
    /// `probs[k]` is the probability of `aspect.levels()[k]`.
    pub probs: Vec<f64>,
}

impl ScoreDistribution {
    /// Probability-weighted mean of the level values.
    pub fn fair_average(&self) -> Result<FairAverageScore> {
        let score = fair_average(&self.probs, &self.aspect.level_values())?;
        Ok(FairAverageScore {
            response_id: self.response_id.clone(),
            aspect: self.aspect,
            ordering_index: self.ordering_index,
            score,
        })
    }
}

/// One fair average, for one (response, aspect, ordering) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairAverageScore {
    pub response_id: String,
    pub aspect: AspectId,
    pub ordering_index: u32,
    pub score: f64,
}

/// The ten per-aspect scores of one response (one exam part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScoreVector {
    pub response_id: String,
    pub part: u8,
    pub aspects: BTreeMap<AspectId, f64>,
}

impl AnalyticScoreVector {
    /// Builds a vector, requiring every aspect exactly once and each score
    /// inside its aspect's value range.
    pub fn new(response_id: String, part: u8, aspects: BTreeMap<AspectId, f64>) -> Result<Self> {
        for aspect in AspectId::ALL {
            let score = *aspects.get(&aspect).ok_or_else(|| {
                NlaError::Validation(format!(
                    "analytic vector for response {response_id:?} is missing aspect {}",
                    aspect.code()
                ))
            })?;
            let values = aspect.level_values();
            let (lo, hi) = (values[0], values[values.len() - 1]);
            if !(lo..=hi).contains(&score) {
                return Err(NlaError::Validation(format!(
                    "aspect {} score {score} outside [{lo}, {hi}] for response {response_id:?}",
                    aspect.code()
                )));
            }
        }
        if aspects.len() != AspectId::ALL.len() {
            return Err(NlaError::Validation(format!(
                "analytic vector for response {response_id:?} has {} aspects, expected {}",
                aspects.len(),
                AspectId::ALL.len()
            )));
        }
        Ok(AnalyticScoreVector {
            response_id,
            part,
            aspects,
        })
    }
}

/// Per-part and overall scores of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolisticScore {
    pub candidate_id: String,
    pub part_scores: BTreeMap<u8, f64>,
    pub overall: f64,
}

/// Numerically stable softmax (max-subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(NlaError::Validation("softmax of an empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(NlaError::Validation(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Reassigns logits from presentation labels to canonical ascending level
/// order via the prompt's label bindings, then softmaxes. Softmax commutes
/// with permutation, so this equals permuting the softmax output.
pub fn to_level_distribution(logits: &OptionLogits, prompt: &Prompt) -> Result<ScoreDistribution> {
    logits.validate_labels(prompt.labels.labels())?;
    let mut by_level = Vec::with_capacity(prompt.labels.len());
    for &level in prompt.aspect.levels() {
        let label = prompt.labels.label_for(level).ok_or_else(|| {
            NlaError::Validation(format!(
                "prompt for aspect {} offers no label for level {}",
                prompt.aspect.code(),
                level.code()
            ))
        })?;
        by_level.push(logits.logits[&label]);
    }
    Ok(ScoreDistribution {
        response_id: prompt.response_id.clone(),
        aspect: prompt.aspect,
        ordering_index: prompt.ordering_index,
        probs: softmax(&by_level)?,
    })
}

/// Fair average: the dot product of a probability vector with the level
/// values it ranges over.
pub fn fair_average(probs: &[f64], values: &[f64]) -> Result<f64> {
    if probs.len() != values.len() {
        return Err(NlaError::Validation(format!(
            "fair average length mismatch: {} probabilities, {} values",
            probs.len(),
            values.len()
        )));
    }
    if probs.is_empty() {
        return Err(NlaError::Validation(
            "fair average of an empty vector".into(),
        ));
    }
    Ok(probs.iter().zip(values).map(|(p, v)| p * v).sum())
}

/// Mean over the per-ordering fair averages of one (response, aspect) pair.
pub fn aspect_score(scores: &[FairAverageScore]) -> Result<f64> {
    let first = scores
        .first()
        .ok_or_else(|| NlaError::Validation("aspect score of zero orderings".into()))?;
    for s in scores {
        if s.response_id != first.response_id || s.aspect != first.aspect {
            return Err(NlaError::Validation(format!(
                "aspect score mixes ({:?}, {}) with ({:?}, {})",
                first.response_id,
                first.aspect.code(),
                s.response_id,
                s.aspect.code()
            )));
        }
    }
    Ok(scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64)
}

/// Holistic score of one part: the mean of its ten analytic scores.
pub fn part_holistic(vector: &AnalyticScoreVector) -> f64 {
    vector.aspects.values().sum::<f64>() / vector.aspects.len() as f64
}

/// Overall score: the mean over whichever parts the candidate submitted.
pub fn overall_score(candidate_id: &str, parts: &BTreeMap<u8, f64>) -> Result<HolisticScore> {
    if parts.is_empty() {
        return Err(NlaError::Validation(format!(
            "candidate {candidate_id:?} has no scored parts"
        )));
    }
    let overall = parts.values().sum::<f64>() / parts.len() as f64;
    Ok(HolisticScore {
        candidate_id: candidate_id.to_string(),
        part_scores: parts.clone(),
        overall,
    })
}
