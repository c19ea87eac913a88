//! Positional-bias diagnostics: Jensen-Shannon divergence between the level
//! distributions produced by different descriptor orderings of the same
//! prompt.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bank::AspectId;
use crate::error::{NlaError, Result};
use crate::scoring::ScoreDistribution;

/// How the divergences of n > 2 orderings collapse to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasAggregation {
    /// Mean JSD over the C(n,2) ordering pairs. Stays in [0, 1].
    PairwiseMean,
    /// Generalized n-way JSD, H(mean) - mean(H). Bounded by log2 n, so it
    /// can exceed 1 for n > 2; for n = 2 it equals the pairwise value.
    Generalized,
}

/// Mean divergence and sample count for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectBias {
    pub mean_jsd: f64,
    pub n_responses: usize,
}

/// Per-aspect positional-bias summary over a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub aggregation: BiasAggregation,
    pub per_aspect: BTreeMap<AspectId, AspectBias>,
}

fn check_normalized(name: &str, p: &[f64]) -> Result<()> {
    let mut total = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(NlaError::Validation(format!(
                "{name} has invalid probability {v}"
            )));
        }
        total += v;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(NlaError::Validation(format!(
            "{name} sums to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Base-2 entropy with the 0 log 0 := 0 convention.
fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum()
}

/// Kullback-Leibler divergence in bits, assuming q dominates p.
fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).log2())
        .sum()
}

/// Jensen-Shannon divergence, base 2, so the result lies in [0, 1].
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(NlaError::Validation(format!(
            "jsd length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if p.is_empty() {
        return Err(NlaError::Validation("jsd of empty vectors".into()));
    }
    check_normalized("p", p)?;
    check_normalized("q", q)?;
    let m: Vec<f64> = p.iter().zip(q).map(|(&a, &b)| 0.5 * (a + b)).collect();
    let value = 0.5 * kl_bits(p, &m) + 0.5 * kl_bits(q, &m);
    Ok(value.max(0.0))
}

/// Generalized n-way JSD (uniform weights): H(mean) - mean(H).
pub fn generalized_jsd(dists: &[&[f64]]) -> Result<f64> {
    if dists.len() < 2 {
        return Err(NlaError::Validation(
            "generalized jsd needs at least 2 distributions".into(),
        ));
    }
    let k = dists[0].len();
    for (i, d) in dists.iter().enumerate() {
        if d.len() != k {
            return Err(NlaError::Validation(format!(
                "generalized jsd length mismatch at distribution {i}"
            )));
        }
        check_normalized("distribution", d)?;
    }
    let n = dists.len() as f64;
    let mut mean = vec![0.0; k];
    for d in dists {
        for (m, &v) in mean.iter_mut().zip(*d) {
            *m += v / n;
        }
    }
    let mean_entropy: f64 = dists.iter().map(|d| entropy(d)).sum::<f64>() / n;
    Ok((entropy(&mean) - mean_entropy).max(0.0))
}

/// Divergence among one response's per-ordering distributions.
fn response_bias(dists: &[&ScoreDistribution], aggregation: BiasAggregation) -> Result<f64> {
    if dists.len() < 2 {
        return Err(NlaError::Validation(format!(
            "response {:?} has {} ordering distribution(s), bias needs at least 2",
            dists[0].response_id,
            dists.len()
        )));
    }
    match aggregation {
        BiasAggregation::PairwiseMean => {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for i in 0..dists.len() {
                for j in i + 1..dists.len() {
                    total += jsd(&dists[i].probs, &dists[j].probs)?;
                    pairs += 1;
                }
            }
            Ok(total / pairs as f64)
        }
        BiasAggregation::Generalized => {
            let probs: Vec<&[f64]> = dists.iter().map(|d| d.probs.as_slice()).collect();
            generalized_jsd(&probs)
        }
    }
}

/// Mean positional bias of one aspect: per-response divergence over ordering
/// pairs, averaged across every response of every part.
pub fn aspect_bias(
    dists: &[ScoreDistribution],
    aggregation: BiasAggregation,
) -> Result<AspectBias> {
    let first = dists
        .first()
        .ok_or_else(|| NlaError::Validation("aspect bias of zero distributions".into()))?;
    let mut by_response: BTreeMap<&str, Vec<&ScoreDistribution>> = BTreeMap::new();
    for d in dists {
        if d.aspect != first.aspect {
            return Err(NlaError::Validation(format!(
                "aspect bias mixes {} with {}",
                first.aspect.code(),
                d.aspect.code()
            )));
        }
        by_response.entry(&d.response_id).or_default().push(d);
    }
    let mut total = 0.0;
    for group in by_response.values_mut() {
        group.sort_by_key(|d| d.ordering_index);
        total += response_bias(group, aggregation)?;
    }
    Ok(AspectBias {
        mean_jsd: total / by_response.len() as f64,
        n_responses: by_response.len(),
    })
}

/// Assembles the per-aspect bias table for a full run.
pub fn bias_report(
    dists: &[ScoreDistribution],
    aggregation: BiasAggregation,
) -> Result<BiasReport> {
    let mut by_aspect: BTreeMap<AspectId, Vec<ScoreDistribution>> = BTreeMap::new();
    for d in dists {
        by_aspect.entry(d.aspect).or_default().push(d.clone());
    }
    let mut per_aspect = BTreeMap::new();
    for (aspect, group) in by_aspect {
        per_aspect.insert(aspect, aspect_bias(&group, aggregation)?);
    }
    Ok(BiasReport {
        aggregation,
        per_aspect,
    })
}
