//! End-to-end re-aggregation: learn a model from the source counts, push the
//! covariates through it, condition on the observed aggregates and summarise
//! the destination marginals. Also the population-weighted baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationMatrix, CountVector, NullSpaceFrame};
use crate::conditioning::{condition, AggregatedPosterior, ConditionedPosterior, ConditioningDiagnostics, McmcConfig, Strategy};
use crate::correspondence::{build_correspondence, weighted_feature, WeightedFeature};
use crate::error::{check_len, ReaggError, Result};
use crate::model::{
    dependence_diagnostic, fit_bayes, fit_map, predict_latent, CovariateTable, DependenceScore, EvidencePoint,
    FitOptions, LatentDistribution, LikelihoodKind, LinearModel, Weights,
};
use crate::stats::{normal_quantile, quantile_type7};

/// Samples below which a summary carries a warning.
pub const MIN_SUMMARY_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Weighted,
    Probabilistic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Weighted => "weighted",
            Method::Probabilistic => "probabilistic",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = ReaggError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Method::Weighted),
            "probabilistic" => Ok(Method::Probabilistic),
            other => Err(ReaggError::InvalidInput(format!(
                "unknown method `{other}` (expected weighted or probabilistic)"
            ))),
        }
    }
}

/// How model weights are learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learning {
    Map,
    #[default]
    Bayes,
}

impl Learning {
    pub fn name(self) -> &'static str {
        match self {
            Learning::Map => "map",
            Learning::Bayes => "bayes",
        }
    }
}

impl std::str::FromStr for Learning {
    type Err = ReaggError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Learning::Map),
            "bayes" => Ok(Learning::Bayes),
            other => Err(ReaggError::InvalidInput(format!("unknown learning mode `{other}` (expected map or bayes)"))),
        }
    }
}

/// Lower/upper quantile pair with `0 < lower < 0.5 < upper < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub lower: f64,
    pub upper: f64,
}

impl Default for QuantilePair {
    fn default() -> Self {
        Self {
            lower: 0.05,
            upper: 0.95,
        }
    }
}

impl QuantilePair {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let q = Self { lower, upper };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower > 0.0 && self.lower < 0.5 && self.upper > 0.5 && self.upper < 1.0) {
            return Err(ReaggError::InvalidInput(format!(
                "quantile pair ({}, {}) must satisfy 0 < lower < 0.5 < upper < 1",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for QuantilePair {
    type Err = ReaggError;

    /// Parses `"0.05,0.95"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let parse = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| ReaggError::InvalidInput(format!("quantile `{p}` is not a number")))
        };
        match parts.as_slice() {
            [lo, hi] => QuantilePair::new(parse(lo)?, parse(hi)?),
            _ => Err(ReaggError::InvalidInput(format!("expected two comma-separated quantiles, got `{s}`"))),
        }
    }
}

/// A full re-aggregation request.
#[derive(Debug, Clone)]
pub struct ReaggregationJob {
    pub y_s: CountVector,
    /// Base covariates; optional when `prior` fixes the latent distribution.
    pub x_b: Option<CovariateTable>,
    pub a_sb: AggregationMatrix,
    pub a_db: AggregationMatrix,
    pub likelihood: LikelihoodKind,
    pub method: Method,
    /// `None` selects exact for Gaussian latents and MCMC otherwise.
    pub strategy: Option<Strategy>,
    pub learning: Learning,
    pub quantiles: QuantilePair,
    pub seed: u64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub fit: FitOptions,
    /// Prepend an intercept column to the covariates before fitting.
    pub intercept: bool,
    /// Constrain latent counts to be nonnegative; defaults to true for
    /// count likelihoods and false for Gaussian.
    pub nonnegative: Option<bool>,
    /// Skips learning and uses this latent distribution directly.
    pub prior: Option<LatentDistribution>,
    /// Weighted method: covariate column holding the population.
    pub weight_column: Option<String>,
    /// Weighted method: `x* = X_b w` instead of a single column.
    pub weight_vector: Option<Vec<f64>>,
    pub diagnostic_folds: usize,
}

impl ReaggregationJob {
    /// A job with default settings.
    pub fn new(
        y_s: CountVector,
        x_b: Option<CovariateTable>,
        a_sb: AggregationMatrix,
        a_db: AggregationMatrix,
        likelihood: LikelihoodKind,
    ) -> Self {
        Self {
            y_s,
            x_b,
            a_sb,
            a_db,
            likelihood,
            method: Method::Probabilistic,
            strategy: None,
            learning: Learning::Bayes,
            quantiles: QuantilePair::default(),
            seed: 0,
            n_samples: 5000,
            burn_in: 1000,
            thinning: 1,
            chains: 1,
            fit: FitOptions::default(),
            intercept: true,
            nonnegative: None,
            prior: None,
            weight_column: None,
            weight_vector: None,
            diagnostic_folds: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.quantiles.validate()?;
        self.likelihood.validate()?;
        check_len("source/destination base regions", self.a_sb.n_base(), self.a_db.n_base())?;
        check_len("source counts", self.a_sb.n_groups(), self.y_s.len())?;
        if let Some(x) = &self.x_b {
            check_len("covariate rows", self.a_sb.n_base(), x.n_rows())?;
        }
        if let Some(p) = &self.prior {
            check_len("prior dimension", self.a_sb.n_base(), p.len())?;
            p.validate()?;
        }
        if let Some(v) = self.y_s.values.iter().find(|v| !v.is_finite()) {
            return Err(ReaggError::InvalidInput(format!("source count {v} is not finite")));
        }
        if self.likelihood.is_count() {
            self.y_s.check_counts()?;
        }
        if let LikelihoodKind::Binomial { population } = &self.likelihood {
            check_len("binomial population", self.a_sb.n_base(), population.len())?;
        }
        if self.n_samples == 0 {
            return Err(ReaggError::InvalidInput("n_samples must be positive".into()));
        }
        match self.method {
            Method::Probabilistic if self.x_b.is_none() && self.prior.is_none() => Err(ReaggError::InvalidInput(
                "the probabilistic method needs covariates or an explicit prior".into(),
            )),
            Method::Weighted if self.x_b.is_none() => {
                Err(ReaggError::InvalidInput("the weighted method needs a covariate table".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn nonnegative(&self) -> bool {
        self.nonnegative.unwrap_or_else(|| self.likelihood.is_count())
    }

    pub fn default_strategy(&self) -> Strategy {
        match self.likelihood {
            LikelihoodKind::Gaussian { .. } => Strategy::Exact,
            _ => Strategy::Mcmc,
        }
    }

    fn mcmc_config(&self) -> McmcConfig {
        McmcConfig {
            n_samples: self.n_samples,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
            chains: self.chains,
            ..McmcConfig::default()
        }
    }
}

/// One destination region's predictive marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dest_id: String,
    pub expectation: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub sd: Option<f64>,
}

/// Learned model details reported with a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub features: Vec<String>,
    pub link: crate::model::Link,
    pub weights: Vec<f64>,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub evidence_trace: Vec<EvidencePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetadata {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strategy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning: Option<String>,
    pub likelihood: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantiles: Option<QuantilePair>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dependence: Option<DependenceScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<ConditioningDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipped_weights: Option<usize>,
    pub warnings: Vec<String>,
}

impl SummaryMetadata {
    fn new(method: Method, likelihood: &LikelihoodKind, seed: u64) -> Self {
        Self {
            method: method.name().into(),
            strategy: None,
            learning: None,
            likelihood: likelihood.name().into(),
            quantiles: None,
            seed,
            n_samples: None,
            dependence: None,
            model: None,
            conditioning: None,
            clipped_weights: None,
            warnings: Vec::new(),
        }
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub rows: Vec<SummaryRow>,
    pub metadata: SummaryMetadata,
}

impl PredictiveSummary {
    pub fn expectations(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.expectation).collect()
    }
}

/// Per-region expectation, quantiles and sd of an aggregated posterior.
///
/// Gaussian posteriors use normal quantiles; samples use type-7 empirical
/// quantiles. `clip_at_zero` clips intervals below at zero. Bounds are
/// widened to contain the expectation when a skewed sample puts the mean
/// outside the quantile pair. Returns the rows and any warnings.
pub fn summarize(
    posterior: &AggregatedPosterior,
    ids: &[String],
    quantiles: QuantilePair,
    clip_at_zero: bool,
) -> Result<(Vec<SummaryRow>, Vec<String>)> {
    quantiles.validate()?;
    let mut warnings = Vec::new();
    let mut rows = Vec::with_capacity(ids.len());
    match posterior {
        AggregatedPosterior::Gaussian { mean, cov } => {
            check_len("summary regions", ids.len(), mean.len())?;
            let (z_lo, z_hi) = (normal_quantile(quantiles.lower), normal_quantile(quantiles.upper));
            for (i, id) in ids.iter().enumerate() {
                let sd = cov[(i, i)].max(0.0).sqrt();
                rows.push(SummaryRow {
                    dest_id: id.clone(),
                    expectation: mean[i],
                    lower: Some(mean[i] + z_lo * sd),
                    upper: Some(mean[i] + z_hi * sd),
                    sd: Some(sd),
                });
            }
        }
        AggregatedPosterior::Samples(s) => {
            check_len("summary regions", ids.len(), s.ncols())?;
            let n = s.nrows();
            if n < MIN_SUMMARY_SAMPLES {
                warnings.push(format!(
                    "only {n} samples; quantiles from fewer than {MIN_SUMMARY_SAMPLES} samples are unreliable"
                ));
            }
            let mut sorted = Vec::with_capacity(n);
            for (j, id) in ids.iter().enumerate() {
                sorted.clear();
                sorted.extend(s.column(j).iter().copied());
                let mean = sorted.iter().sum::<f64>() / n as f64;
                let sd = crate::stats::sample_variance(&sorted).sqrt();
                sorted.sort_by(f64::total_cmp);
                rows.push(SummaryRow {
                    dest_id: id.clone(),
                    expectation: mean,
                    lower: Some(quantile_type7(&sorted, quantiles.lower)),
                    upper: Some(quantile_type7(&sorted, quantiles.upper)),
                    sd: Some(sd),
                });
            }
        }
    }
    let mut widened = 0;
    for row in rows.iter_mut() {
        if clip_at_zero {
            row.lower = row.lower.map(|v| v.max(0.0));
            row.upper = row.upper.map(|v| v.max(0.0));
        }
        if let (Some(lo), Some(hi)) = (row.lower, row.upper) {
            if lo > row.expectation || hi < row.expectation {
                widened += 1;
                row.lower = Some(lo.min(row.expectation));
                row.upper = Some(hi.max(row.expectation));
            }
        }
    }
    if widened > 0 {
        warnings.push(format!(
            "{widened} intervals widened to contain their expectation (skewed marginals)"
        ));
    }
    Ok((rows, warnings))
}

fn model_report(model: &LinearModel, features: Vec<String>) -> ModelReport {
    ModelReport {
        features,
        link: model.link,
        weights: model.weights.mean().iter().copied().collect(),
        lambda: model.lambda,
        noise_variance: model.noise_variance(),
        log_evidence: model.log_evidence,
        condition_number: model.condition_number,
        evidence_trace: model.evidence_trace.clone(),
    }
}

/// Covariates as fed to the model: with an intercept column if requested.
pub fn design(job: &ReaggregationJob) -> Option<CovariateTable> {
    job.x_b.as_ref().map(|x| if job.intercept { x.with_intercept() } else { x.clone() })
}

/// Fits the job's model per its learning mode. Needs covariates.
pub fn fit_model(job: &ReaggregationJob) -> Result<(LinearModel, CovariateTable)> {
    job.validate()?;
    let x = design(job).ok_or_else(|| ReaggError::InvalidInput("fitting a model needs covariates".into()))?;
    let model = match job.learning {
        Learning::Bayes => fit_bayes(&x.values, &job.y_s.values, &job.a_sb, &job.likelihood, &job.fit)?,
        Learning::Map => {
            let lambda = job.fit.lambda.unwrap_or(1.0);
            fit_map(&x.values, &job.y_s.values, &job.a_sb, &job.likelihood, lambda, &job.fit)?
        }
    };
    Ok((model, x))
}

fn learn(job: &ReaggregationJob, meta: &mut SummaryMetadata) -> Result<LatentDistribution> {
    let (model, x) = fit_model(job)?;
    meta.learning = Some(job.learning.name().into());
    meta.model = Some(model_report(&model, x.columns.clone()));
    if let Some(c) = model.condition_number {
        if c > 1e12 {
            meta.warn(format!("posterior precision is ill-conditioned (condition number {c:.3e})"));
        }
    }
    // Poisson and binomial latents use the plug-in posterior mean weights
    let plug_in = match (&model.likelihood, &model.weights) {
        (LikelihoodKind::Gaussian { .. }, _) => model,
        (_, Weights::Gaussian { mean, .. }) => LinearModel {
            weights: Weights::Point(mean.clone()),
            ..model
        },
        _ => model,
    };
    predict_latent(&plug_in, &x.values)
}

/// Learn, infer, condition, summarise.
pub fn reaggregate_probabilistic(job: &ReaggregationJob) -> Result<PredictiveSummary> {
    reaggregate_with_posterior(job).map(|(summary, _)| summary)
}

/// As [`reaggregate_probabilistic`], also returning the conditioned
/// base-level posterior.
pub fn reaggregate_with_posterior(job: &ReaggregationJob) -> Result<(PredictiveSummary, ConditionedPosterior)> {
    job.validate()?;
    let mut meta = SummaryMetadata::new(Method::Probabilistic, &job.likelihood, job.seed);
    meta.quantiles = Some(job.quantiles);

    let design = design(job);
    if let Some(x) = &design {
        let folds = job.diagnostic_folds;
        if folds >= 2 && job.y_s.len() >= 2 * folds {
            let score = dependence_diagnostic(&x.values, &job.y_s.values, &job.a_sb, folds)?;
            if score.weak {
                meta.warn(format!(
                    "dependence diagnostic score {:.4} ≤ 0: covariates explain the source counts no better than their marginal",
                    score.score
                ));
            }
            meta.dependence = Some(score);
        } else {
            meta.warn(format!(
                "dependence diagnostic skipped: {} source regions is too few for {folds} folds",
                job.y_s.len()
            ));
        }
    }

    let latent = match (&job.prior, &design) {
        (Some(prior), _) => prior.clone(),
        (None, Some(_)) => learn(job, &mut meta)?,
        (None, None) => unreachable!("validated"),
    };

    let strategy = job.strategy.unwrap_or_else(|| job.default_strategy());
    let is_gaussian = matches!(latent, LatentDistribution::Gaussian { .. });
    if matches!(strategy, Strategy::Exact | Strategy::Variational) && !is_gaussian {
        return Err(ReaggError::InvalidInput(format!(
            "the {} strategy needs a Gaussian latent; use mcmc or projection for {} data",
            strategy.name(),
            latent.kind_name()
        )));
    }
    meta.strategy = Some(strategy.name().into());
    let frame = NullSpaceFrame::new(&job.a_sb, &job.y_s)?;
    let posterior = condition(&latent, &frame, strategy, &job.mcmc_config(), job.nonnegative())?;
    if posterior.samples().is_some() {
        meta.n_samples = Some(job.n_samples);
    }
    let aggregated = posterior.aggregate(&job.a_db)?;
    let (rows, warnings) = summarize(&aggregated, job.a_db.group_ids(), job.quantiles, job.likelihood.is_count())?;
    for w in warnings {
        meta.warn(w);
    }
    meta.warnings.extend(posterior.diagnostics.warnings.iter().cloned());
    meta.conditioning = Some(posterior.diagnostics.clone());
    Ok((PredictiveSummary { rows, metadata: meta }, posterior))
}

fn weighting_feature(job: &ReaggregationJob, x: &CovariateTable) -> Result<WeightedFeature> {
    if let Some(w) = &job.weight_vector {
        return weighted_feature(&x.values, w);
    }
    let column = match &job.weight_column {
        Some(name) => name.clone(),
        None if x.columns.iter().any(|c| c == "population") => "population".into(),
        None if x.columns.len() == 1 => x.columns[0].clone(),
        None => {
            return Err(ReaggError::InvalidInput(
                "the weighted method needs a weight column (none named `population`)".into(),
            ))
        }
    };
    let j = x
        .columns
        .iter()
        .position(|c| *c == column)
        .ok_or_else(|| ReaggError::InvalidInput(format!("weight column `{column}` not found in covariates")))?;
    let mut unit = vec![0.0; x.columns.len()];
    unit[j] = 1.0;
    weighted_feature(&x.values, &unit)
}

/// Population-weighted baseline: point estimates `C Y_s`, no intervals.
pub fn reaggregate_weighted(job: &ReaggregationJob) -> Result<PredictiveSummary> {
    job.validate()?;
    let x = job.x_b.as_ref().expect("validated");
    let feature = weighting_feature(job, x)?;
    let c = build_correspondence(&job.a_db, &job.a_sb, &feature)?;
    let values = c.apply(&job.y_s.values)?;
    let mut meta = SummaryMetadata::new(Method::Weighted, &job.likelihood, job.seed);
    if feature.clipped > 0 {
        meta.clipped_weights = Some(feature.clipped);
        meta.warn(format!("{} negative weighting entries clipped to zero", feature.clipped));
    }
    let rows = job
        .a_db
        .group_ids()
        .iter()
        .zip(values)
        .map(|(id, v)| SummaryRow {
            dest_id: id.clone(),
            expectation: v,
            lower: None,
            upper: None,
            sd: None,
        })
        .collect();
    Ok(PredictiveSummary { rows, metadata: meta })
}

pub fn reaggregate(job: &ReaggregationJob) -> Result<PredictiveSummary> {
    match job.method {
        Method::Weighted => reaggregate_weighted(job),
        Method::Probabilistic => reaggregate_probabilistic(job),
    }
}

/// Gaussian latent with diagonal covariance, e.g. for an explicit prior.
pub fn diagonal_gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Result<LatentDistribution> {
    check_len("prior variance", mean.len(), variance.len())?;
    Ok(LatentDistribution::Gaussian {
        mean: DVector::from_vec(mean),
        cov: DMatrix::from_diagonal(&DVector::from_vec(variance)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_aggregation_matrix;

    fn toy_job(a_db: AggregationMatrix) -> ReaggregationJob {
        let a_sb = build_aggregation_matrix(&[0, 0], 1).unwrap();
        let mut job = ReaggregationJob::new(
            CountVector::unlabelled(vec![100.0]),
            None,
            a_sb,
            a_db,
            LikelihoodKind::Gaussian { noise_variance: 1.0 },
        );
        job.prior = Some(diagonal_gaussian(vec![50.0, 35.0], vec![200.0, 100.0]).unwrap());
        job
    }

    #[test]
    fn toy_problem_to_base() {
        let s = reaggregate_probabilistic(&toy_job(AggregationMatrix::identity(2))).unwrap();
        let r = &s.rows[0];
        assert!((r.expectation - 60.0).abs() < 1e-9);
        assert!((r.sd.unwrap() - (200.0f64 / 3.0).sqrt()).abs() < 1e-9);
        assert!((r.lower.unwrap() - 46.57).abs() < 5e-3);
        assert!((r.upper.unwrap() - 73.43).abs() < 5e-3);
        assert!((s.rows[1].expectation - 40.0).abs() < 1e-9);
        assert_eq!(s.metadata.strategy.as_deref(), Some("exact"));
    }

    #[test]
    fn toy_problem_mcmc() {
        let mut job = toy_job(AggregationMatrix::identity(2));
        job.strategy = Some(Strategy::Mcmc);
        job.n_samples = 20_000;
        let s = reaggregate_probabilistic(&job).unwrap();
        assert!((s.rows[0].expectation - 60.0).abs() < 1.0);
        assert!((s.rows[0].expectation + s.rows[1].expectation - 100.0).abs() < 1e-9);
    }

    #[test]
    fn destination_equal_to_source_is_pinned() {
        let a_sb = build_aggregation_matrix(&[0, 0], 1).unwrap();
        let s = reaggregate_probabilistic(&toy_job(a_sb)).unwrap();
        let r = &s.rows[0];
        assert!((r.expectation - 100.0).abs() < 1e-9);
        assert!(r.upper.unwrap() - r.lower.unwrap() < 1e-9);
    }

    #[test]
    fn zero_poisson_counts_stay_zero() {
        let a_sb = build_aggregation_matrix(&[0, 0, 1, 1], 2).unwrap();
        let mut job = ReaggregationJob::new(
            CountVector::unlabelled(vec![0.0, 0.0]),
            None,
            a_sb,
            AggregationMatrix::identity(4),
            LikelihoodKind::Poisson,
        );
        job.prior = Some(LatentDistribution::Poisson {
            rates: vec![1.0, 2.0, 3.0, 4.0],
        });
        job.n_samples = 200;
        let s = reaggregate_probabilistic(&job).unwrap();
        for r in &s.rows {
            assert_eq!((r.expectation, r.lower, r.upper), (0.0, Some(0.0), Some(0.0)));
        }
    }

    #[test]
    fn summarize_examples() {
        let g = AggregatedPosterior::Gaussian {
            mean: DVector::from_vec(vec![60.0]),
            cov: DMatrix::from_element(1, 1, 200.0 / 3.0),
        };
        let (rows, _) = summarize(&g, &["d".into()], QuantilePair::default(), false).unwrap();
        assert!((rows[0].lower.unwrap() - (60.0 - 1.6448536269514722 * (200.0f64 / 3.0).sqrt())).abs() < 1e-9);

        let constant = AggregatedPosterior::Samples(DMatrix::from_element(150, 1, 7.0));
        let (rows, warnings) = summarize(&constant, &["d".into()], QuantilePair::default(), true).unwrap();
        assert_eq!((rows[0].expectation, rows[0].lower, rows[0].upper), (7.0, Some(7.0), Some(7.0)));
        assert!(warnings.is_empty());

        let few = AggregatedPosterior::Samples(DMatrix::from_element(10, 1, 1.0));
        assert_eq!(summarize(&few, &["d".into()], QuantilePair::default(), true).unwrap().1.len(), 1);
        assert!(QuantilePair::new(0.5, 0.5).is_err());
        assert!("0.05,0.95".parse::<QuantilePair>().is_ok());
        assert!("0.9,0.1".parse::<QuantilePair>().is_err());
    }

    #[test]
    fn weighted_worked_example() {
        let a_db = build_aggregation_matrix(&[0, 0, 1], 2).unwrap();
        let a_sb = build_aggregation_matrix(&[0, 1, 1], 2).unwrap();
        let x = CovariateTable::new(
            vec!["b0".into(), "b1".into(), "b2".into()],
            vec!["population".into()],
            DMatrix::from_column_slice(3, 1, &[10., 20., 30.]),
        )
        .unwrap();
        let mut job = ReaggregationJob::new(
            CountVector::unlabelled(vec![5.0, 100.0]),
            Some(x),
            a_sb,
            a_db,
            LikelihoodKind::Poisson,
        );
        job.method = Method::Weighted;
        let s = reaggregate(&job).unwrap();
        assert_eq!(s.expectations(), vec![45.0, 60.0]);
        assert!(s.rows[0].lower.is_none());
    }
}
