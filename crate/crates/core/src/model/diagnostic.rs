//! Cross-validated check that the covariates carry information about the
//! observed counts.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::{default_lambda_grid, RidgeData};
use super::Standardizer;
use crate::aggregation::AggregationMatrix;
use crate::error::{check_len, ReaggError, Result};
use crate::stats::{mean, normal_log_pdf, sample_variance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceScore {
    /// Mean over folds of the per-point held-out log-density gain.
    pub score: f64,
    pub per_fold: Vec<f64>,
    /// `score <= 0`: the regression does no better than the marginal of `Y_s`.
    pub weak: bool,
}

/// K-fold comparison of a Bayesian linear regression on the aggregated
/// design `A X_b` against a Gaussian fitted to `Y_s` alone. Source group
/// `s` is held out in fold `s mod folds`.
pub fn dependence_diagnostic(
    x_b: &DMatrix<f64>,
    y_s: &[f64],
    a: &AggregationMatrix,
    folds: usize,
) -> Result<DependenceScore> {
    check_len("covariate rows", a.n_base(), x_b.nrows())?;
    check_len("observations", a.n_groups(), y_s.len())?;
    if folds < 2 {
        return Err(ReaggError::InvalidInput(format!("need at least 2 folds, got {folds}")));
    }
    let n = y_s.len();
    if n < 2 * folds {
        return Err(ReaggError::InvalidInput(format!(
            "{n} source regions is too few for {folds} folds (need {})",
            2 * folds
        )));
    }
    let x = Standardizer::fit(x_b).apply(x_b)?;
    let xs = a.aggregate_rows(&x)?;
    let grid = default_lambda_grid();

    let mut per_fold = Vec::with_capacity(folds);
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|s| s % folds != k).collect();
        let test: Vec<usize> = (0..n).filter(|s| s % folds == k).collect();
        let x_train = xs.select_rows(&train);
        let y_train = DVector::from_iterator(train.len(), train.iter().map(|&s| y_s[s]));
        let post = RidgeData::new(&x_train, &y_train, 0.0).posterior(&grid, None, None)?;

        let y_vals: Vec<f64> = y_train.iter().copied().collect();
        let mu = mean(&y_vals);
        let var = sample_variance(&y_vals).max(1e-12 * mu.abs().max(1.0));

        let gain: f64 = test
            .iter()
            .map(|&s| {
                let row = xs.row(s).transpose();
                let pred_mean = row.dot(&post.mean);
                let pred_var = post.noise_variance + row.dot(&(&post.cov * &row));
                normal_log_pdf(y_s[s], pred_mean, pred_var) - normal_log_pdf(y_s[s], mu, var)
            })
            .sum();
        per_fold.push(gain / test.len() as f64);
    }
    let score = mean(&per_fold);
    Ok(DependenceScore {
        score,
        per_fold,
        weak: score <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn setup(signal: bool, seed: u64) -> (DMatrix<f64>, Vec<f64>, AggregationMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) });
        let y = (0..n)
            .map(|i| {
                let noise: f64 = rng.sample(StandardNormal);
                if signal {
                    5.0 + 3.0 * x[(i, 1)] + 0.1 * noise
                } else {
                    5.0 + noise
                }
            })
            .collect();
        (x, y, AggregationMatrix::identity(n))
    }

    #[test]
    fn linear_signal_scores_positive() {
        let (x, y, a) = setup(true, 1);
        let d = dependence_diagnostic(&x, &y, &a, 5).unwrap();
        assert!(d.score > 1.0 && !d.weak, "{d:?}");
    }

    #[test]
    fn noise_covariates_score_near_zero() {
        let (x, y, a) = setup(false, 2);
        let d = dependence_diagnostic(&x, &y, &a, 5).unwrap();
        assert!(d.score < 0.1, "{d:?}");
    }

    #[test]
    fn intercept_only_matches_marginal() {
        let (_, y, a) = setup(false, 3);
        let x = DMatrix::from_element(60, 1, 1.0);
        let d = dependence_diagnostic(&x, &y, &a, 4).unwrap();
        assert!(d.score.abs() < 0.05, "{d:?}");
    }

    #[test]
    fn fold_checks() {
        let (x, y, a) = setup(false, 4);
        assert!(dependence_diagnostic(&x, &y, &a, 1).is_err());
        assert!(dependence_diagnostic(&x, &y, &a, 31).is_err());
    }
}
