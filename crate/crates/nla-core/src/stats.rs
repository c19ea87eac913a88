//! Evaluation metrics (Pearson and Spearman correlation) and the
//! repeated-measures battery (Friedman test with Nemenyi post-hoc).

pub mod dist;

use serde::{Deserialize, Serialize};

use crate::error::{NlaError, Result};
use dist::{chi_square_sf, studentized_range_sf};

/// Which correlation a [`CorrelationResult`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Pcc,
    Src,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub k: usize,
    pub n: usize,
}

/// Pairwise post-hoc comparison over k groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NemenyiResult {
    pub k: usize,
    pub n: usize,
    pub mean_ranks: Vec<f64>,
    /// Symmetric k x k matrix of range statistics, zero diagonal.
    pub q_stats: Vec<Vec<f64>>,
    /// Symmetric k x k matrix of p-values, unit diagonal.
    pub p_values: Vec<Vec<f64>>,
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(NlaError::Validation(format!(
            "correlation length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(NlaError::Validation(format!(
            "correlation needs at least 2 samples, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(NlaError::Validation(
            "non-finite value in correlation input".into(),
        ));
    }
    Ok(())
}

/// Pearson product-moment correlation, computed in two passes.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_paired(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(NlaError::DegenerateStats(
            "correlation undefined: an input vector is constant".into(),
        ));
    }
    Ok(CorrelationResult {
        metric: Metric::Pcc,
        value: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        n: x.len(),
    })
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn src(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check_paired(x, y)?;
    let result = pcc(&average_ranks(x), &average_ranks(y))?;
    Ok(CorrelationResult {
        metric: Metric::Src,
        ..result
    })
}

/// Shape-checks a subjects-by-groups matrix and ranks each row.
fn rank_rows(data: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if data.len() < 2 {
        return Err(NlaError::Validation(format!(
            "rank test needs at least 2 subjects, got {}",
            data.len()
        )));
    }
    let k = data[0].len();
    if k < 2 {
        return Err(NlaError::Validation(format!(
            "rank test needs at least 2 groups, got {k}"
        )));
    }
    let mut ranked = Vec::with_capacity(data.len());
    for (i, row) in data.iter().enumerate() {
        if row.len() != k {
            return Err(NlaError::Validation(format!(
                "row {i} has {} groups, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(NlaError::Validation(format!("non-finite value in row {i}")));
        }
        ranked.push(average_ranks(row));
    }
    Ok(ranked)
}

/// Sum over a ranked row's tie groups of t^3 - t.
fn tie_term(ranked_row: &[f64]) -> f64 {
    let mut sorted = ranked_row.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite ranks"));
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * t * t - t;
        i = j + 1;
    }
    total
}

/// Friedman rank test over an n-subjects by k-groups matrix, with the
/// standard tie correction.
pub fn friedman(data: &[Vec<f64>]) -> Result<FriedmanResult> {
    let ranked = rank_rows(data)?;
    let n = ranked.len() as f64;
    let k = ranked[0].len() as f64;

    let mut rank_sums = vec![0.0; ranked[0].len()];
    let mut ties = 0.0;
    for row in &ranked {
        for (sum, &r) in rank_sums.iter_mut().zip(row) {
            *sum += r;
        }
        ties += tie_term(row);
    }
    let correction = 1.0 - ties / (n * (k * k * k - k));
    if correction <= 0.0 {
        return Err(NlaError::DegenerateStats(
            "Friedman statistic undefined: every subject's values are fully tied".into(),
        ));
    }
    let sum_sq: f64 = rank_sums.iter().map(|r| r * r).sum();
    let uncorrected = 12.0 / (n * k * (k + 1.0)) * sum_sq - 3.0 * n * (k + 1.0);
    let statistic = (uncorrected / correction).max(0.0);
    let df = ranked[0].len() as u32 - 1;
    Ok(FriedmanResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df)?,
        k: ranked[0].len(),
        n: ranked.len(),
    })
}

/// Nemenyi post-hoc test: pairwise studentized-range comparisons of mean
/// ranks. Identical groups simply yield p = 1; unlike [`friedman`] there is
/// no all-tied failure mode.
pub fn nemenyi(data: &[Vec<f64>]) -> Result<NemenyiResult> {
    let ranked = rank_rows(data)?;
    let n = ranked.len();
    let k = ranked[0].len();

    let mut mean_ranks = vec![0.0; k];
    for row in &ranked {
        for (m, &r) in mean_ranks.iter_mut().zip(row) {
            *m += r;
        }
    }
    for m in &mut mean_ranks {
        *m /= n as f64;
    }

    let se = (k as f64 * (k as f64 + 1.0) / (6.0 * n as f64)).sqrt();
    let mut q_stats = vec![vec![0.0; k]; k];
    let mut p_values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let q = (mean_ranks[i] - mean_ranks[j]).abs() / se;
            let p = studentized_range_sf(q * std::f64::consts::SQRT_2, k as u32)?;
            q_stats[i][j] = q;
            q_stats[j][i] = q;
            p_values[i][j] = p;
            p_values[j][i] = p;
        }
    }
    Ok(NemenyiResult {
        k,
        n,
        mean_ranks,
        q_stats,
        p_values,
    })
}
