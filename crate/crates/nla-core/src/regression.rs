//! Per-part ridge regression from predicted analytic scores to reference
//! part scores, plus the coefficient table across parts.
//!
//! The fit is the closed-form solution on centered data: with Xc and yc the
//! column-centered inputs, beta = (Xc'Xc + alpha I)^-1 Xc'yc and the
//! unpenalized intercept is b = mean(y) - mean(x)'beta. No feature
//! standardization is applied. The penalized Gram matrix is symmetric
//! positive definite for alpha > 0, so a plain Cholesky solve suffices; at
//! alpha = 0 a non-positive pivot means collinear columns and is reported
//! as such.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::AspectId;
use crate::error::{NlaError, Result};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::scoring::AnalyticScoreVector;

/// Schema tag for serialized model files.
pub const MODELS_SCHEMA: &str = "nla-models/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub alpha: f64,
    pub fit_intercept: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            alpha: 1.0,
            fit_intercept: true,
        }
    }
}

/// Fitted coefficients for one exam part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub part: u8,
    pub alpha: f64,
    pub n_samples: usize,
    /// One weight per aspect, canonical aspect order.
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RegressionModel {
    /// Fits a part model on rows of analytic scores in canonical aspect
    /// order against reference part scores.
    pub fn fit(part: u8, x: &[Vec<f64>], y: &[f64], cfg: &RidgeConfig) -> Result<Self> {
        let width = AspectId::ALL.len();
        if x.iter().any(|row| row.len() != width) {
            return Err(NlaError::Validation(format!(
                "part {part} design matrix must have {width} aspect columns"
            )));
        }
        let (weights, intercept) = ridge_fit(x, y, cfg)?;
        Ok(RegressionModel {
            part,
            alpha: cfg.alpha,
            n_samples: y.len(),
            weights,
            intercept,
        })
    }
}

fn validate_design(x: &[Vec<f64>], y: &[f64], cfg: &RidgeConfig) -> Result<usize> {
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(NlaError::Config(format!(
            "ridge alpha must be finite and non-negative, got {}",
            cfg.alpha
        )));
    }
    if x.len() != y.len() {
        return Err(NlaError::Validation(format!(
            "design matrix has {} rows, target has {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(NlaError::Validation(format!(
            "ridge fit needs at least 2 samples, got {}",
            x.len()
        )));
    }
    let width = x[0].len();
    if width == 0 {
        return Err(NlaError::Validation("design matrix has no columns".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(NlaError::Validation(format!(
                "design matrix row {i} has {} columns, expected {width}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(NlaError::Validation(format!(
                "non-finite value in design matrix row {i}"
            )));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NlaError::Validation(
            "non-finite value in target vector".into(),
        ));
    }
    Ok(width)
}

/// In-place Cholesky solve of the symmetric positive definite system
/// `a x = rhs`. `a` is overwritten with its lower factor.
#[allow(clippy::needless_range_loop)]
fn cholesky_solve(a: &mut [Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let p = rhs.len();
    let scale = (0..p).map(|i| a[i][i].abs()).fold(1.0, f64::max);
    for j in 0..p {
        for i in j..p {
            let mut sum = a[i][j];
            for l in 0..j {
                sum -= a[i][l] * a[j][l];
            }
            if i == j {
                if sum <= scale * 1e-12 {
                    return Err(NlaError::Validation(
                        "singular system: collinear columns with alpha = 0".into(),
                    ));
                }
                a[j][j] = sum.sqrt();
            } else {
                a[i][j] = sum / a[j][j];
            }
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut sum = rhs[i];
        for l in 0..i {
            sum -= a[i][l] * z[l];
        }
        z[i] = sum / a[i][i];
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let mut sum = z[i];
        for l in i + 1..p {
            sum -= a[l][i] * beta[l];
        }
        beta[i] = sum / a[i][i];
    }
    Ok(beta)
}

/// Closed-form ridge regression; returns (weights, intercept).
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], cfg: &RidgeConfig) -> Result<(Vec<f64>, f64)> {
    let width = validate_design(x, y, cfg)?;
    let n = y.len();

    let mut x_mean = vec![0.0; width];
    let mut y_mean = 0.0;
    if cfg.fit_intercept {
        for row in x {
            for (m, &v) in x_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut x_mean {
            *m /= n as f64;
        }
        y_mean = y.iter().sum::<f64>() / n as f64;
    }

    let mut gram = vec![vec![0.0; width]; width];
    let mut rhs = vec![0.0; width];
    for (row, &yv) in x.iter().zip(y) {
        let yc = yv - y_mean;
        for i in 0..width {
            let xi = row[i] - x_mean[i];
            rhs[i] += xi * yc;
            for j in 0..=i {
                gram[i][j] += xi * (row[j] - x_mean[j]);
            }
        }
    }
    #[allow(clippy::needless_range_loop)]
    for i in 0..width {
        for j in 0..i {
            gram[j][i] = gram[i][j];
        }
        gram[i][i] += cfg.alpha;
    }

    let beta = cholesky_solve(&mut gram, &rhs)?;
    let intercept = if cfg.fit_intercept {
        y_mean - x_mean.iter().zip(&beta).map(|(m, b)| m * b).sum::<f64>()
    } else {
        0.0
    };
    Ok((beta, intercept))
}

/// Applies a part model to one response's analytic scores.
pub fn ridge_predict(model: &RegressionModel, vector: &AnalyticScoreVector) -> Result<f64> {
    let mut value = model.intercept;
    for (weight, &aspect) in model.weights.iter().zip(AspectId::ALL.iter()) {
        let score = vector.aspects.get(&aspect).ok_or_else(|| {
            NlaError::Validation(format!(
                "prediction input is missing aspect {}",
                aspect.code()
            ))
        })?;
        value += weight * score;
    }
    Ok(value)
}

/// One aspect's coefficients across parts, with top-3 flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub aspect: AspectId,
    pub betas: Vec<f64>,
    /// True where the value ranks in the row's top 3. A value tying with
    /// the largest excluded value is not flagged, so an all-tied row (for
    /// example all zeros) carries no flags.
    pub flags: Vec<bool>,
}

/// Coefficient table: rows are aspects, columns are parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub parts: Vec<u8>,
    pub rows: Vec<BetaRow>,
}

fn top3_flags(betas: &[f64]) -> Vec<bool> {
    if betas.len() <= 3 {
        return vec![true; betas.len()];
    }
    let mut sorted = betas.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let threshold = sorted[3];
    betas.iter().map(|&v| v > threshold).collect()
}

/// Builds the cross-part coefficient table for `expected_parts`; every part
/// must have a fitted model.
pub fn beta_report(
    models: &BTreeMap<u8, RegressionModel>,
    expected_parts: &[u8],
) -> Result<BetaReport> {
    if expected_parts.is_empty() {
        return Err(NlaError::Validation("beta report over zero parts".into()));
    }
    let mut columns = Vec::with_capacity(expected_parts.len());
    for &part in expected_parts {
        let model = models
            .get(&part)
            .ok_or_else(|| NlaError::Validation(format!("no fitted model for part {part}")))?;
        columns.push(model);
    }
    let rows = AspectId::ALL
        .iter()
        .enumerate()
        .map(|(i, &aspect)| {
            let betas: Vec<f64> = columns.iter().map(|m| m.weights[i]).collect();
            let flags = top3_flags(&betas);
            BetaRow {
                aspect,
                betas,
                flags,
            }
        })
        .collect();
    Ok(BetaReport {
        parts: expected_parts.to_vec(),
        rows,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelsHeader {
    schema: String,
}

/// Persists the fitted part models, one record per part.
pub fn save_models(path: &Path, models: &BTreeMap<u8, RegressionModel>) -> Result<()> {
    let header = ModelsHeader {
        schema: MODELS_SCHEMA.to_string(),
    };
    let records: Vec<&RegressionModel> = models.values().collect();
    write_jsonl(path, &header, &records)
}

pub fn load_models(path: &Path) -> Result<BTreeMap<u8, RegressionModel>> {
    let (_, records): (ModelsHeader, Vec<RegressionModel>) = read_jsonl(path, MODELS_SCHEMA)?;
    let mut models = BTreeMap::new();
    for model in records {
        if model.weights.len() != AspectId::ALL.len() {
            return Err(NlaError::parse(
                path,
                format!(
                    "model for part {} has {} weights, expected {}",
                    model.part,
                    model.weights.len(),
                    AspectId::ALL.len()
                ),
            ));
        }
        if models.insert(model.part, model).is_some() {
            return Err(NlaError::parse(path, "duplicate part model".to_string()));
        }
    }
    Ok(models)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cfg(alpha: f64) -> RidgeConfig {
        RidgeConfig {
            alpha,
            fit_intercept: true,
        }
    }

    #[test]
    fn exact_linear_fit_at_alpha_zero() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![2.0, 4.0, 6.0];
        let (beta, intercept) = ridge_fit(&x, &y, &cfg(0.0)).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12);
        assert!(intercept.abs() < 1e-12);
    }

    /// Verifies the hand-derived one-dimensional solution
    /// beta = Sxy / (Sxx + alpha) on centered data.
    #[test]
    fn shrinkage_matches_closed_form() {
        let x = vec![vec![-1.0], vec![1.0]];
        let y = vec![-1.0, 1.0];
        let (beta, intercept) = ridge_fit(&x, &y, &cfg(1.0)).unwrap();
        assert!((beta[0] - 2.0 / 3.0).abs() < 1e-12, "got {}", beta[0]);
        assert!(intercept.abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_fail_only_at_alpha_zero() {
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let y = vec![1.0, 2.0, 3.0];
        let err = ridge_fit(&x, &y, &cfg(0.0)).unwrap_err();
        assert!(err.to_string().contains("collinear"), "got: {err}");
        assert!(ridge_fit(&x, &y, &cfg(1.0)).is_ok());
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(ridge_fit(&[vec![1.0]], &[1.0], &cfg(1.0)).is_err());
        assert!(ridge_fit(&[vec![1.0], vec![f64::NAN]], &[1.0, 2.0], &cfg(1.0)).is_err());
        assert!(ridge_fit(&[vec![1.0], vec![2.0]], &[1.0, f64::NAN], &cfg(1.0)).is_err());
        assert!(ridge_fit(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &cfg(-1.0)).is_err());
        assert!(ridge_fit(&[vec![], vec![]], &[1.0, 2.0], &cfg(1.0)).is_err());
    }

    #[test]
    fn huge_alpha_shrinks_to_mean_predictor() {
        let x = vec![
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![3.0, 5.0],
            vec![4.0, 3.0],
        ];
        let y = vec![2.0, 3.0, 5.0, 6.0];
        let (beta, intercept) = ridge_fit(&x, &y, &cfg(1e12)).unwrap();
        assert!(beta.iter().all(|b| b.abs() < 1e-9));
        assert!((intercept - 4.0).abs() < 1e-6);
    }

    #[test]
    fn without_intercept_solves_through_origin() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![2.0, 4.0, 6.0];
        let cfg = RidgeConfig {
            alpha: 0.0,
            fit_intercept: false,
        };
        let (beta, intercept) = ridge_fit(&x, &y, &cfg).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-12);
        assert_eq!(intercept, 0.0);
    }

    fn full_vector(score: f64) -> AnalyticScoreVector {
        let aspects = AspectId::ALL.iter().map(|&a| (a, score)).collect();
        AnalyticScoreVector::new("r".into(), 1, aspects).unwrap()
    }

    #[test]
    fn zero_model_predicts_its_intercept() {
        let model = RegressionModel {
            part: 1,
            alpha: 1.0,
            n_samples: 2,
            weights: vec![0.0; 10],
            intercept: 3.5,
        };
        assert_eq!(ridge_predict(&model, &full_vector(2.0)).unwrap(), 3.5);
        assert_eq!(ridge_predict(&model, &full_vector(6.0)).unwrap(), 3.5);
    }

    /// Verifies an unpenalized fit on exactly linear data reproduces the
    /// training targets through ridge_predict.
    #[test]
    fn unpenalized_fit_reproduces_training_point() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            ((state >> 11) as f64) / ((1u64 << 53) as f64) * 3.0 + 2.0
        };
        let rows: Vec<Vec<f64>> = (0..14).map(|_| (0..10).map(|_| next()).collect()).collect();
        let true_w: Vec<f64> = (0..10).map(|j| 0.05 * (j as f64 + 1.0)).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&true_w).map(|(v, w)| v * w).sum::<f64>() + 0.4)
            .collect();
        let model = RegressionModel::fit(
            1,
            &rows,
            &y,
            &RidgeConfig {
                alpha: 0.0,
                fit_intercept: true,
            },
        )
        .unwrap();
        let aspects: BTreeMap<AspectId, f64> = AspectId::ALL
            .iter()
            .zip(&rows[0])
            .map(|(&a, &v)| (a, v))
            .collect();
        let vector = AnalyticScoreVector::new("r".into(), 1, aspects).unwrap();
        let predicted = ridge_predict(&model, &vector).unwrap();
        assert!(
            (predicted - y[0]).abs() < 1e-9,
            "got {predicted}, want {}",
            y[0]
        );
    }

    #[test]
    fn beta_report_flags_top_three_per_row() {
        let mut models = BTreeMap::new();
        for (i, part) in [1u8, 3, 4, 5].into_iter().enumerate() {
            let mut weights = vec![0.0; 10];
            weights[0] = 0.1 * (i + 1) as f64;
            models.insert(
                part,
                RegressionModel {
                    part,
                    alpha: 1.0,
                    n_samples: 4,
                    weights,
                    intercept: 0.0,
                },
            );
        }
        let report = beta_report(&models, &[1, 3, 4, 5]).unwrap();
        assert_eq!(report.parts, vec![1, 3, 4, 5]);
        assert_eq!(report.rows.len(), 10);

        let first = &report.rows[0];
        assert_eq!(first.aspect, AspectId::Glr);
        for (i, &b) in first.betas.iter().enumerate() {
            assert!((b - 0.1 * (i + 1) as f64).abs() < 1e-12);
        }
        assert_eq!(first.flags, vec![false, true, true, true]);

        for row in &report.rows[1..] {
            assert!(row.betas.iter().all(|&b| b == 0.0));
            assert!(
                row.flags.iter().all(|&f| !f),
                "all-tied row must carry no flags"
            );
        }
    }

    #[test]
    fn beta_report_requires_every_part() {
        let models = BTreeMap::new();
        let err = beta_report(&models, &[1, 3, 4, 5]).unwrap_err();
        assert!(err.to_string().contains("part 1"), "got: {err}");
    }

    #[test]
    fn boundary_tie_drops_flags() {
        assert_eq!(
            top3_flags(&[5.0, 4.0, 3.0, 3.0]),
            vec![true, true, false, false]
        );
        assert_eq!(
            top3_flags(&[5.0, 5.0, 5.0, 1.0]),
            vec![true, true, true, false]
        );
    }

    /// Verifies persisted models reload exactly.
    #[test]
    fn models_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.jsonl");
        let mut models = BTreeMap::new();
        for part in [1u8, 3] {
            models.insert(
                part,
                RegressionModel {
                    part,
                    alpha: 1.0,
                    n_samples: 20,
                    weights: (0..10).map(|i| i as f64 * 0.25 - 1.0).collect(),
                    intercept: 0.75,
                },
            );
        }
        save_models(&path, &models).unwrap();
        assert_eq!(load_models(&path).unwrap(), models);
    }

    proptest! {
        /// Row order never changes the fit.
        #[test]
        fn fit_is_permutation_invariant(
            seed in 0u64..1000,
            swap_a in 0usize..8,
            swap_b in 0usize..8,
        ) {
            let mut v = seed;
            let mut next = || {
                v = v.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((v >> 33) as f64) / (u32::MAX as f64) * 4.0 + 1.0
            };
            let x: Vec<Vec<f64>> = (0..8).map(|_| (0..3).map(|_| next()).collect()).collect();
            let y: Vec<f64> = (0..8).map(|_| next()).collect();
            let (beta, b) = ridge_fit(&x, &y, &cfg(1.0)).unwrap();

            let mut xp = x.clone();
            let mut yp = y.clone();
            xp.swap(swap_a, swap_b);
            yp.swap(swap_a, swap_b);
            let (beta_p, b_p) = ridge_fit(&xp, &yp, &cfg(1.0)).unwrap();
            for (a, c) in beta.iter().zip(&beta_p) {
                prop_assert!((a - c).abs() < 1e-12);
            }
            prop_assert!((b - b_p).abs() < 1e-12);
        }

        /// The coefficient norm shrinks monotonically in alpha.
        #[test]
        fn larger_alpha_never_grows_the_norm(seed in 0u64..1000) {
            let mut v = seed.wrapping_add(17);
            let mut next = || {
                v = v.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((v >> 33) as f64) / (u32::MAX as f64) * 4.0 + 1.0
            };
            let x: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| next()).collect()).collect();
            let y: Vec<f64> = (0..12).map(|_| next()).collect();
            let mut last = f64::INFINITY;
            for alpha in [0.0, 0.5, 1.0, 10.0, 100.0] {
                let (beta, _) = ridge_fit(&x, &y, &cfg(alpha)).unwrap();
                let norm: f64 = beta.iter().map(|b| b * b).sum();
                prop_assert!(norm <= last + 1e-9);
                last = norm;
            }
        }
    }
}
