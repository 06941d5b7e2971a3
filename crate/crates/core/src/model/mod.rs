//! The generative model: process likelihoods, the linear regressor from
//! base covariates to latent parameters, closed-form aggregation of the
//! induced count distributions, and learning.

mod aggregate;
mod diagnostic;
mod fit;
pub mod objective;

pub use aggregate::{
    aggregate_binomial_approx, aggregate_gaussian, aggregate_poisson, log_likelihood, BinomialApprox,
};
pub use diagnostic::{dependence_diagnostic, DependenceScore};
pub use fit::{fit_bayes, fit_map, EvidencePoint, FitOptions};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, ReaggError, Result};
use crate::stats::sigmoid;

/// Floor applied to rates under the identity-with-floor link.
pub const RATE_FLOOR: f64 = 1e-8;

/// Base-geometry covariates `X_b` (rows = base regions).
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub base_ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl CovariateTable {
    pub fn new(base_ids: Vec<String>, columns: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        check_len("covariate rows", base_ids.len(), values.nrows())?;
        check_len("covariate columns", columns.len(), values.ncols())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ReaggError::InvalidInput("covariates contain non-finite values".into()));
        }
        Ok(Self {
            base_ids,
            columns,
            values,
        })
    }

    /// Unlabelled table from a dense matrix.
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        Self {
            base_ids: (0..values.nrows()).map(|i| i.to_string()).collect(),
            columns: (0..values.ncols()).map(|j| format!("x{j}")).collect(),
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.values.column(j).iter().copied().collect())
    }

    /// Prepends a column of ones named `intercept` unless a constant column
    /// already exists.
    pub fn with_intercept(&self) -> Self {
        let has_constant = (0..self.values.ncols()).any(|j| {
            let col = self.values.column(j);
            let first = col[0];
            first != 0.0 && col.iter().all(|&v| v == first)
        });
        if has_constant || self.values.nrows() == 0 {
            return self.clone();
        }
        let n = self.values.nrows();
        let values = self.values.clone().insert_column(0, 1.0);
        debug_assert_eq!(values.nrows(), n);
        let mut columns = vec!["intercept".to_string()];
        columns.extend(self.columns.iter().cloned());
        Self {
            base_ids: self.base_ids.clone(),
            columns,
            values,
        }
    }
}

/// Process likelihood `P(Y_b | Z_b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodKind {
    /// Homoscedastic Gaussian noise with variance `noise_variance` per base region.
    Gaussian { noise_variance: f64 },
    Poisson,
    /// Binomial with per-base population `N_b`, aggregated by expectation matching.
    Binomial { population: Vec<f64> },
}

impl LikelihoodKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            LikelihoodKind::Gaussian { noise_variance } if !(*noise_variance > 0.0) => Err(
                ReaggError::InvalidInput(format!("noise variance must be positive, got {noise_variance}")),
            ),
            LikelihoodKind::Binomial { population } => {
                if let Some(bad) = population.iter().find(|&&n| !(n >= 1.0) || n.fract() != 0.0) {
                    return Err(ReaggError::InvalidInput(format!(
                        "binomial population entries must be positive integers, got {bad}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LikelihoodKind::Gaussian { .. } => "gaussian",
            LikelihoodKind::Poisson => "poisson",
            LikelihoodKind::Binomial { .. } => "binomial",
        }
    }

    /// Count likelihoods imply nonnegative latent counts.
    pub fn is_count(&self) -> bool {
        !matches!(self, LikelihoodKind::Gaussian { .. })
    }

    pub fn default_link(&self) -> Link {
        match self {
            LikelihoodKind::Gaussian { .. } => Link::Identity,
            LikelihoodKind::Poisson => Link::Log,
            LikelihoodKind::Binomial { .. } => Link::Logit,
        }
    }
}

/// Map from the linear predictor `X_b W` to the latent parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    /// Identity clamped below at [`RATE_FLOOR`] (Poisson only).
    IdentityFloor,
    Log,
    Logit,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::IdentityFloor => eta.max(RATE_FLOOR),
            Link::Log => eta.exp(),
            Link::Logit => sigmoid(eta),
        }
    }

    fn compatible(self, kind: &LikelihoodKind) -> bool {
        matches!(
            (self, kind),
            (Link::Identity, LikelihoodKind::Gaussian { .. })
                | (Link::Log | Link::IdentityFloor, LikelihoodKind::Poisson)
                | (Link::Logit, LikelihoodKind::Binomial { .. })
        )
    }
}

/// Point weights or a Gaussian weight posterior.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Point(DVector<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl Weights {
    pub fn mean(&self) -> &DVector<f64> {
        match self {
            Weights::Point(w) => w,
            Weights::Gaussian { mean, .. } => mean,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean().len()
    }
}

/// Per-column affine standardisation `(x - shift) / scale`.
///
/// Constant columns pass through unchanged (shift 0, scale 1) so an
/// explicit intercept survives. Columns are centred only when such an
/// intercept exists; otherwise they are scaled, which keeps the model class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(d: usize) -> Self {
        Self {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let moments: Vec<(f64, f64)> = x
            .column_iter()
            .map(|col| {
                let m = col.sum() / n;
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                (m, var)
            })
            .collect();
        let is_constant = |&(m, var): &(f64, f64)| var <= 1e-24 * f64::max(m * m, 1.0);
        let centre = moments.iter().any(|mv| is_constant(mv) && mv.0 != 0.0);
        let mut shift = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for mv in &moments {
            if is_constant(mv) {
                shift.push(0.0);
                scale.push(1.0);
            } else {
                shift.push(if centre { mv.0 } else { 0.0 });
                scale.push(mv.1.sqrt());
            }
        }
        Self { shift, scale }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("standardizer columns", self.shift.len(), x.ncols())?;
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - self.shift[j]) / self.scale[j]);
        }
        Ok(out)
    }
}

/// A fitted linear model `Z_b = link⁻¹(standardise(X_b) W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub link: Link,
    pub weights: Weights,
    pub likelihood: LikelihoodKind,
    /// Prior precision `λ` of the spherical weight prior.
    pub lambda: f64,
    pub standardizer: Standardizer,
    /// Log (approximate) marginal likelihood at the selected hyperparameters.
    pub log_evidence: Option<f64>,
    pub evidence_trace: Vec<EvidencePoint>,
    /// Condition number of the posterior precision.
    pub condition_number: Option<f64>,
}

impl LinearModel {
    /// A model with point weights on unstandardised features.
    pub fn with_point_weights(link: Link, weights: Vec<f64>, likelihood: LikelihoodKind) -> Self {
        let d = weights.len();
        Self {
            link,
            weights: Weights::Point(DVector::from_vec(weights)),
            likelihood,
            lambda: 1.0,
            standardizer: Standardizer::identity(d),
            log_evidence: None,
            evidence_trace: Vec::new(),
            condition_number: None,
        }
    }

    pub fn noise_variance(&self) -> Option<f64> {
        match self.likelihood {
            LikelihoodKind::Gaussian { noise_variance } => Some(noise_variance),
            _ => None,
        }
    }
}

/// Distribution of the latent base counts induced by the model.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentDistribution {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    Poisson { rates: Vec<f64> },
    Binomial { population: Vec<f64>, probs: Vec<f64> },
}

impl LatentDistribution {
    pub fn len(&self) -> usize {
        match self {
            LatentDistribution::Gaussian { mean, .. } => mean.len(),
            LatentDistribution::Poisson { rates } => rates.len(),
            LatentDistribution::Binomial { probs, .. } => probs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LatentDistribution::Gaussian { .. } => "gaussian",
            LatentDistribution::Poisson { .. } => "poisson",
            LatentDistribution::Binomial { .. } => "binomial",
        }
    }

    /// Mean of the latent counts.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            LatentDistribution::Gaussian { mean, .. } => mean.iter().copied().collect(),
            LatentDistribution::Poisson { rates } => rates.clone(),
            LatentDistribution::Binomial { population, probs } => {
                population.iter().zip(probs).map(|(n, p)| n * p).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LatentDistribution::Gaussian { mean, cov } => {
                check_len("latent covariance", mean.len(), cov.nrows())?;
                check_len("latent covariance", mean.len(), cov.ncols())?;
                if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
                    return Err(ReaggError::Numerical("non-finite Gaussian latent".into()));
                }
            }
            LatentDistribution::Poisson { rates } => {
                if let Some(r) = rates.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
                    return Err(ReaggError::Numerical(format!("Poisson rate {r} is not positive and finite")));
                }
            }
            LatentDistribution::Binomial { population, probs } => {
                check_len("binomial population", probs.len(), population.len())?;
                if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(ReaggError::Numerical(format!("binomial probability {p} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Pushes covariates through the model to the latent distribution.
pub fn predict_latent(model: &LinearModel, x_b: &DMatrix<f64>) -> Result<LatentDistribution> {
    check_len("feature dimension", model.weights.dim(), x_b.ncols())?;
    if !model.link.compatible(&model.likelihood) {
        return Err(ReaggError::InvalidInput(format!(
            "link {:?} is not compatible with a {} likelihood",
            model.link,
            model.likelihood.name()
        )));
    }
    let x = model.standardizer.apply(x_b)?;
    let eta = &x * model.weights.mean();
    let latent = match (&model.likelihood, &model.weights) {
        (LikelihoodKind::Gaussian { noise_variance }, Weights::Gaussian { mean: _, cov }) => {
            let mut c = &x * cov * x.transpose();
            for i in 0..c.nrows() {
                c[(i, i)] += noise_variance;
            }
            crate::stats::symmetrize(&mut c);
            LatentDistribution::Gaussian { mean: eta, cov: c }
        }
        (LikelihoodKind::Gaussian { noise_variance }, Weights::Point(_)) => {
            let n = eta.len();
            LatentDistribution::Gaussian {
                mean: eta,
                cov: DMatrix::from_diagonal_element(n, n, *noise_variance),
            }
        }
        (LikelihoodKind::Poisson, _) => LatentDistribution::Poisson {
            rates: eta.iter().map(|&e| model.link.inverse(e)).collect(),
        },
        (LikelihoodKind::Binomial { population }, _) => {
            check_len("binomial population", x_b.nrows(), population.len())?;
            LatentDistribution::Binomial {
                population: population.clone(),
                probs: eta.iter().map(|&e| model.link.inverse(e)).collect(),
            }
        }
    };
    latent.validate()?;
    Ok(latent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_latent() {
        let m = LinearModel::with_point_weights(
            Link::Identity,
            vec![0.0, 0.0],
            LikelihoodKind::Gaussian { noise_variance: 1.0 },
        );
        let x = DMatrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]);
        match predict_latent(&m, &x).unwrap() {
            LatentDistribution::Gaussian { mean, .. } => assert!(mean.iter().all(|&v| v == 0.0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn intercept_posterior_latent() {
        let m = LinearModel {
            weights: Weights::Gaussian {
                mean: DVector::from_vec(vec![4.0]),
                cov: DMatrix::from_element(1, 1, 0.5),
            },
            ..LinearModel::with_point_weights(Link::Identity, vec![0.0], LikelihoodKind::Gaussian { noise_variance: 1.0 })
        };
        let x = DMatrix::from_element(2, 1, 1.0);
        let LatentDistribution::Gaussian { mean, cov } = predict_latent(&m, &x).unwrap() else {
            panic!()
        };
        assert_eq!(mean.as_slice(), &[4.0, 4.0]);
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.5]));
    }

    #[test]
    fn log_link_rates() {
        let m = LinearModel::with_point_weights(Link::Log, vec![1.0], LikelihoodKind::Poisson);
        let x = DMatrix::from_column_slice(2, 1, &[2f64.ln(), 3f64.ln()]);
        let LatentDistribution::Poisson { rates } = predict_latent(&m, &x).unwrap() else {
            panic!()
        };
        assert!((rates[0] - 2.0).abs() < 1e-15 && (rates[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_floor_keeps_rates_positive() {
        let m = LinearModel::with_point_weights(Link::IdentityFloor, vec![1.0], LikelihoodKind::Poisson);
        let x = DMatrix::from_column_slice(2, 1, &[-3.0, 2.0]);
        let LatentDistribution::Poisson { rates } = predict_latent(&m, &x).unwrap() else {
            panic!()
        };
        assert_eq!(rates, vec![RATE_FLOOR, 2.0]);
    }

    #[test]
    fn mismatched_dimension_and_link() {
        let m = LinearModel::with_point_weights(Link::Log, vec![1.0, 2.0], LikelihoodKind::Poisson);
        assert!(predict_latent(&m, &DMatrix::zeros(2, 1)).is_err());
        let bad = LinearModel::with_point_weights(Link::Logit, vec![1.0], LikelihoodKind::Poisson);
        assert!(predict_latent(&bad, &DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn standardizer_passes_constant_columns() {
        let x = DMatrix::from_row_slice(3, 2, &[1., 2., 1., 4., 1., 6.]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.shift[0], 0.0);
        assert_eq!(s.scale[0], 1.0);
        let z = s.apply(&x).unwrap();
        assert!(z.column(1).sum().abs() < 1e-12);
        assert!((z.column(1).norm_squared() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intercept_added_once() {
        let t = CovariateTable::from_matrix(DMatrix::from_row_slice(2, 1, &[3., 5.]));
        let with = t.with_intercept();
        assert_eq!(with.columns, vec!["intercept", "x0"]);
        assert_eq!(with.with_intercept().columns.len(), 2);
    }
}
