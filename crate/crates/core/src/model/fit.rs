//! Learning the linear model from aggregated observations.
//!
//! Gaussian noise is modelled per base region, so `Y_s ~ N(A X W, σ² D)`
//! with `D = diag(group sizes)`. Whitening by `D^{-1/2}` reduces the
//! Gaussian case to ordinary Bayesian ridge regression; with `A = I` the
//! formulas are the textbook ones. Count likelihoods use Newton MAP and a
//! Laplace approximation to the evidence.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::objective::{maximize, BinomialObjective, Objective, PoissonObjective};
use super::{LikelihoodKind, Link, LinearModel, Standardizer, Weights};
use crate::aggregation::AggregationMatrix;
use crate::error::{check_len, ReaggError, Result};
use crate::stats::{chol_log_det, condition_number, robust_cholesky, LN_2PI};

/// One evaluated hyperparameter setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidencePoint {
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    pub log_evidence: f64,
}

/// Fitting controls. Missing fields in a config document take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Overrides the likelihood's default link.
    pub link: Option<Link>,
    pub standardize: bool,
    pub lambda_grid: Vec<f64>,
    /// Fixes `λ` instead of searching the grid.
    pub lambda: Option<f64>,
    /// Fixes the Gaussian `σ²` instead of profiling it.
    pub noise_variance: Option<f64>,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            link: None,
            standardize: true,
            lambda_grid: default_lambda_grid(),
            lambda: None,
            noise_variance: None,
            max_iter: 200,
            grad_tol: 1e-8,
        }
    }
}

/// `λ ∈ 10^{-6..4}`, 21 log-spaced points.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..21).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect()
}

struct Prepared {
    x: DMatrix<f64>,
    standardizer: Standardizer,
    link: Link,
}

fn prepare(
    x_b: &DMatrix<f64>,
    y_s: &[f64],
    a: &AggregationMatrix,
    kind: &LikelihoodKind,
    opts: &FitOptions,
) -> Result<Prepared> {
    kind.validate()?;
    check_len("covariate rows", a.n_base(), x_b.nrows())?;
    check_len("observations", a.n_groups(), y_s.len())?;
    if x_b.ncols() == 0 {
        return Err(ReaggError::InvalidInput("design has no columns".into()));
    }
    if x_b.iter().any(|v| !v.is_finite()) {
        return Err(ReaggError::InvalidInput("covariates contain non-finite values".into()));
    }
    if let Some(v) = y_s.iter().find(|v| !v.is_finite()) {
        return Err(ReaggError::InvalidInput(format!("observation {v} is not finite")));
    }
    if kind.is_count() {
        if let Some(v) = y_s.iter().find(|v| **v < 0.0 || v.fract() != 0.0) {
            return Err(ReaggError::InvalidInput(format!(
                "{} observation {v} is not a nonnegative integer",
                kind.name()
            )));
        }
    }
    if let LikelihoodKind::Binomial { population } = kind {
        check_len("binomial population", a.n_base(), population.len())?;
        let trials = a.aggregate(population)?;
        if let Some(s) = (0..y_s.len()).find(|&s| y_s[s] > trials[s]) {
            return Err(ReaggError::InvalidInput(format!(
                "group {} has {} successes from {} trials",
                a.group_ids()[s],
                y_s[s],
                trials[s]
            )));
        }
    }
    let link = opts.link.unwrap_or_else(|| kind.default_link());
    if !link.compatible(kind) {
        return Err(ReaggError::InvalidInput(format!(
            "link {link:?} is not compatible with a {} likelihood",
            kind.name()
        )));
    }
    let standardizer = if opts.standardize {
        Standardizer::fit(x_b)
    } else {
        Standardizer::identity(x_b.ncols())
    };
    let x = standardizer.apply(x_b)?;
    Ok(Prepared { x, standardizer, link })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ReaggError::InvalidInput(format!("λ must be positive, got {lambda}")));
    }
    Ok(())
}

/// Aggregated design and observations whitened by `D^{-1/2}`.
fn whiten(x: &DMatrix<f64>, y_s: &[f64], a: &AggregationMatrix) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let mut xs = a.aggregate_rows(x)?;
    let mut y = DVector::from_column_slice(y_s);
    let mut log_det_d = 0.0;
    for (s, &size) in a.group_sizes().iter().enumerate() {
        let w = (size as f64).sqrt();
        xs.row_mut(s).apply(|v| *v /= w);
        y[s] /= w;
        log_det_d += (size as f64).ln();
    }
    Ok((xs, y, log_det_d))
}

/// Bayesian ridge regression on a whitened design.
pub(crate) struct RidgeData {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: usize,
    /// Log-determinant of the whitening, added back to the evidence.
    log_det_d: f64,
}

pub(crate) struct RidgePosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub lambda: f64,
    pub noise_variance: f64,
    pub log_evidence: f64,
    pub trace: Vec<EvidencePoint>,
    pub condition_number: f64,
}

impl RidgeData {
    pub(crate) fn new(x: &DMatrix<f64>, y: &DVector<f64>, log_det_d: f64) -> Self {
        Self {
            xtx: x.transpose() * x,
            xty: x.transpose() * y,
            yty: y.norm_squared(),
            n: y.len(),
            log_det_d,
        }
    }

    fn precision(&self, lambda: f64, sigma2: f64) -> DMatrix<f64> {
        let d = self.xtx.nrows();
        &self.xtx / sigma2 + DMatrix::from_diagonal_element(d, d, lambda)
    }

    /// `log N(y | 0, σ² I + X Xᵀ / λ)` via the `d × d` Woodbury identity.
    fn log_evidence(&self, lambda: f64, sigma2: f64) -> f64 {
        let d = self.xtx.nrows() as f64;
        let Some(chol) = robust_cholesky(&self.precision(lambda, sigma2)) else {
            return f64::NEG_INFINITY;
        };
        let b = &self.xty / sigma2;
        let quad = self.yty / sigma2 - b.dot(&chol.solve(&b));
        let log_det_c = self.n as f64 * sigma2.ln() + chol_log_det(&chol) - d * lambda.ln();
        -0.5 * (self.n as f64 * LN_2PI + log_det_c + quad + self.log_det_d)
    }

    /// Profiles `σ²` for fixed `λ`: a log-spaced scan bracketing the
    /// optimum, refined by golden-section search on `log σ²`.
    fn profile_sigma2(&self, lambda: f64) -> (f64, f64) {
        let scale = (self.yty / self.n.max(1) as f64).max(1e-300);
        let lo = scale.log10() - 12.0;
        let steps = 53;
        let grid: Vec<f64> = (0..steps).map(|i| lo + 0.25 * i as f64).collect();
        let f = |t: f64| self.log_evidence(lambda, 10f64.powf(t));
        let values: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
        let best = (0..steps).max_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap_or(0);
        let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps - 1)]);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        while b - a > 1e-10 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        let t = 0.5 * (a + b);
        let (t, v) = if f(t) >= values[best] { (t, f(t)) } else { (grid[best], values[best]) };
        (10f64.powf(t), v)
    }

    pub(crate) fn posterior(
        &self,
        lambda_grid: &[f64],
        fixed_lambda: Option<f64>,
        fixed_sigma2: Option<f64>,
    ) -> Result<RidgePosterior> {
        let lambdas: Vec<f64> = match fixed_lambda {
            Some(l) => vec![l],
            None => lambda_grid.to_vec(),
        };
        if lambdas.is_empty() {
            return Err(ReaggError::InvalidInput("empty λ grid".into()));
        }
        let mut trace = Vec::with_capacity(lambdas.len());
        for &lambda in &lambdas {
            check_lambda(lambda)?;
            let (sigma2, log_evidence) = match fixed_sigma2 {
                Some(s) => (s, self.log_evidence(lambda, s)),
                None => self.profile_sigma2(lambda),
            };
            trace.push(EvidencePoint {
                lambda,
                noise_variance: Some(sigma2),
                log_evidence,
            });
        }
        let best = *trace
            .iter()
            .max_by(|a, b| a.log_evidence.total_cmp(&b.log_evidence))
            .expect("nonempty grid");
        if !best.log_evidence.is_finite() {
            return Err(ReaggError::Numerical("marginal likelihood is not finite on the λ grid".into()));
        }
        let sigma2 = best.noise_variance.expect("gaussian trace carries σ²");
        let precision = self.precision(best.lambda, sigma2);
        let chol = robust_cholesky(&precision).ok_or(ReaggError::IllConditioned {
            condition: condition_number(&precision),
        })?;
        let cov = chol.inverse();
        let mean = &cov * &self.xty / sigma2;
        Ok(RidgePosterior {
            mean,
            cov,
            lambda: best.lambda,
            noise_variance: sigma2,
            log_evidence: best.log_evidence,
            trace,
            condition_number: condition_number(&precision),
        })
    }
}

fn initial_weights(x: &DMatrix<f64>, y_s: &[f64], a: &AggregationMatrix, kind: &LikelihoodKind, link: Link) -> DVector<f64> {
    let d = x.ncols();
    let intercept = (0..d).find(|&j| {
        let c = x[(0, j)];
        c != 0.0 && x.column(j).iter().all(|&v| v == c)
    });
    let total: f64 = y_s.iter().sum();
    let mut w = DVector::zeros(d);
    match (kind, link) {
        (LikelihoodKind::Poisson, Link::Log) => {
            if let Some(j) = intercept {
                let rate = (total / a.n_base() as f64).max(1e-3);
                w[j] = rate.ln() / x[(0, j)];
            }
        }
        (LikelihoodKind::Poisson, _) => {
            if let Ok((xs, ys, _)) = whiten(x, y_s, a) {
                let ridge = RidgeData::new(&xs, &ys, 0.0);
                let m = ridge.precision(1e-6, 1.0);
                if let Some(ch) = robust_cholesky(&m) {
                    w = ch.solve(&ridge.xty);
                }
            }
            if (x * &w).iter().any(|&e| e <= super::RATE_FLOOR) {
                w.fill(0.0);
                if let Some(j) = intercept {
                    w[j] = (total / a.n_base() as f64).max(1e-3) / x[(0, j)];
                }
            }
        }
        (LikelihoodKind::Binomial { population }, _) => {
            if let Some(j) = intercept {
                let trials: f64 = population.iter().sum();
                let p = ((total + 0.5) / (trials + 1.0)).clamp(1e-6, 1.0 - 1e-6);
                w[j] = (p / (1.0 - p)).ln() / x[(0, j)];
            }
        }
        _ => {}
    }
    w
}

fn count_objective<'a>(
    x: &'a DMatrix<f64>,
    y_s: &'a [f64],
    a: &'a AggregationMatrix,
    kind: &'a LikelihoodKind,
    link: Link,
    lambda: f64,
) -> Box<dyn Objective + 'a> {
    match kind {
        LikelihoodKind::Poisson => Box::new(PoissonObjective { x, a, y: y_s, lambda, link }),
        LikelihoodKind::Binomial { population } => Box::new(BinomialObjective {
            x,
            a,
            y: y_s,
            population,
            lambda,
        }),
        LikelihoodKind::Gaussian { .. } => unreachable!("Gaussian fits are closed form"),
    }
}

fn base_model(prep: Prepared, kind: &LikelihoodKind, lambda: f64, weights: Weights) -> LinearModel {
    LinearModel {
        link: prep.link,
        weights,
        likelihood: kind.clone(),
        lambda,
        standardizer: prep.standardizer,
        log_evidence: None,
        evidence_trace: Vec::new(),
        condition_number: None,
    }
}

/// MAP point weights under the prior `N(0, λ⁻¹ I)`.
///
/// Gaussian: ridge closed form on the whitened aggregated design, using the
/// likelihood's `σ²`. Counts: damped Newton ascent to `opts.grad_tol`.
pub fn fit_map(
    x_b: &DMatrix<f64>,
    y_s: &[f64],
    a: &AggregationMatrix,
    kind: &LikelihoodKind,
    lambda: f64,
    opts: &FitOptions,
) -> Result<LinearModel> {
    check_lambda(lambda)?;
    let prep = prepare(x_b, y_s, a, kind, opts)?;
    match kind {
        LikelihoodKind::Gaussian { noise_variance } => {
            let (xs, ys, _) = whiten(&prep.x, y_s, a)?;
            let ridge = RidgeData::new(&xs, &ys, 0.0);
            let m = ridge.precision(lambda * noise_variance, 1.0);
            let chol = robust_cholesky(&m).ok_or(ReaggError::IllConditioned {
                condition: condition_number(&m),
            })?;
            let w = chol.solve(&ridge.xty);
            let cond = condition_number(&m);
            let mut model = base_model(prep, kind, lambda, Weights::Point(w));
            model.condition_number = Some(cond);
            Ok(model)
        }
        _ => {
            let w0 = initial_weights(&prep.x, y_s, a, kind, prep.link);
            let f = count_objective(&prep.x, y_s, a, kind, prep.link, lambda);
            let opt = maximize(f.as_ref(), w0, opts.max_iter, opts.grad_tol)?;
            let cond = condition_number(&-&opt.hessian);
            drop(f);
            let mut model = base_model(prep, kind, lambda, Weights::Point(opt.argmax));
            model.condition_number = Some(cond);
            Ok(model)
        }
    }
}

/// Weight posterior with hyperparameters chosen by type-2 maximum likelihood
/// over `opts.lambda_grid` (flat prior over the grid).
///
/// Gaussian: conjugate posterior, `σ²` profiled per `λ` unless fixed; the
/// returned likelihood carries the selected `σ²`. Counts: Laplace
/// approximation around the MAP, evidence
/// `log p(y|Ŵ) - λ/2|Ŵ|² + d/2 log λ - ½ log|H|`.
pub fn fit_bayes(
    x_b: &DMatrix<f64>,
    y_s: &[f64],
    a: &AggregationMatrix,
    kind: &LikelihoodKind,
    opts: &FitOptions,
) -> Result<LinearModel> {
    let prep = prepare(x_b, y_s, a, kind, opts)?;
    match kind {
        LikelihoodKind::Gaussian { .. } => {
            let (xs, ys, log_det_d) = whiten(&prep.x, y_s, a)?;
            let ridge = RidgeData::new(&xs, &ys, log_det_d);
            let post = ridge.posterior(&opts.lambda_grid, opts.lambda, opts.noise_variance)?;
            let learned = LikelihoodKind::Gaussian {
                noise_variance: post.noise_variance,
            };
            let mut model = base_model(
                prep,
                &learned,
                post.lambda,
                Weights::Gaussian {
                    mean: post.mean,
                    cov: post.cov,
                },
            );
            model.log_evidence = Some(post.log_evidence);
            model.evidence_trace = post.trace;
            model.condition_number = Some(post.condition_number);
            Ok(model)
        }
        _ => {
            let lambdas: Vec<f64> = match opts.lambda {
                Some(l) => vec![l],
                None => opts.lambda_grid.clone(),
            };
            if lambdas.is_empty() {
                return Err(ReaggError::InvalidInput("empty λ grid".into()));
            }
            let d = prep.x.ncols() as f64;
            let mut start = initial_weights(&prep.x, y_s, a, kind, prep.link);
            let mut trace = Vec::with_capacity(lambdas.len());
            let mut best: Option<(f64, f64, DVector<f64>, DMatrix<f64>)> = None;
            let mut last_err = None;
            for &lambda in &lambdas {
                check_lambda(lambda)?;
                let f = count_objective(&prep.x, y_s, a, kind, prep.link, lambda);
                let opt = match maximize(f.as_ref(), start.clone(), opts.max_iter, opts.grad_tol) {
                    Ok(o) => o,
                    Err(e) => {
                        log::warn!("λ = {lambda:e}: {e}");
                        last_err = Some(e);
                        continue;
                    }
                };
                let h = -&opt.hessian;
                let log_evidence = match robust_cholesky(&h) {
                    Some(ch) => opt.value + 0.5 * d * lambda.ln() - 0.5 * chol_log_det(&ch),
                    None => f64::NEG_INFINITY,
                };
                trace.push(EvidencePoint {
                    lambda,
                    noise_variance: None,
                    log_evidence,
                });
                start = opt.argmax.clone();
                if best.as_ref().is_none_or(|b| log_evidence > b.0) {
                    best = Some((log_evidence, lambda, opt.argmax, h));
                }
            }
            let Some((log_evidence, lambda, mean, h)) = best else {
                return Err(last_err.expect("at least one λ was tried"));
            };
            let cond = condition_number(&h);
            let cov = robust_cholesky(&h)
                .ok_or(ReaggError::IllConditioned { condition: cond })?
                .inverse();
            let mut model = base_model(prep, kind, lambda, Weights::Gaussian { mean, cov });
            model.log_evidence = Some(log_evidence);
            model.evidence_trace = trace;
            model.condition_number = Some(cond);
            Ok(model)
        }
    }
}
