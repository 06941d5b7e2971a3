//! Accuracy metrics, a seeded synthetic scenario generator and a small
//! benchmark harness comparing re-aggregation methods against ground truth.

mod benchmark;
mod scenario;

pub use benchmark::{benchmark_job, metrics_csv, run_benchmark, BenchMethod, BenchmarkOptions, MetricsRow};
pub use scenario::{generate_scenario, GeneratedScenario, OverlapPattern, ScenarioLikelihood, SyntheticScenario, UnitRecord};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, ReaggError, Result};
use crate::stats::{mean, normal_log_pdf};

/// Per-point negative log density bound used when a degenerate predictive
/// (zero spread) would give an infinite score.
pub const NLP_CLAMP: f64 = 700.0;

fn check_pair(predicted: &[f64], truth: &[f64]) -> Result<()> {
    check_len("predicted/truth length", truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(ReaggError::InvalidInput("metrics need at least one point".into()));
    }
    Ok(())
}

/// Coefficient of determination `1 - SSE / SST`.
pub fn r2(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(predicted, truth)?;
    if truth.len() < 2 {
        return Err(ReaggError::InvalidInput("R² needs at least two points".into()));
    }
    let m = mean(truth);
    let sst: f64 = truth.iter().map(|t| (t - m).powi(2)).sum();
    if sst == 0.0 {
        return Err(ReaggError::InvalidInput("R² is undefined for constant truth".into()));
    }
    Ok(1.0 - sse(predicted, truth)? / sst)
}

/// Sum of squared errors.
pub fn sse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(predicted, truth)?;
    Ok(predicted.iter().zip(truth).map(|(p, t)| (t - p).powi(2)).sum())
}

pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    Ok((sse(predicted, truth)? / truth.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nlp {
    pub value: f64,
    /// Set when some point's score hit ±[`NLP_CLAMP`].
    pub clamped: bool,
}

/// Mean negative log density of the truth under per-point Gaussians
/// `(mean, sd)`. Zero spreads are allowed; their scores are clamped.
pub fn nlp(predictive: &[(f64, f64)], truth: &[f64]) -> Result<Nlp> {
    check_len("predictive/truth length", truth.len(), predictive.len())?;
    if truth.is_empty() {
        return Err(ReaggError::InvalidInput("metrics need at least one point".into()));
    }
    let mut clamped = false;
    let mut total = 0.0;
    for (&(m, sd), &t) in predictive.iter().zip(truth) {
        if !(sd >= 0.0) {
            return Err(ReaggError::InvalidInput(format!("predictive sd {sd} is negative or NaN")));
        }
        let score = if sd == 0.0 {
            if t == m {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            }
        } else {
            -normal_log_pdf(t, m, sd * sd)
        };
        if score.abs() > NLP_CLAMP {
            clamped = true;
        }
        total += score.clamp(-NLP_CLAMP, NLP_CLAMP);
    }
    Ok(Nlp {
        value: total / truth.len() as f64,
        clamped,
    })
}

/// NLP of sample sets (one slice per point) via a Gaussian moment match.
pub fn nlp_samples(samples: &[Vec<f64>], truth: &[f64]) -> Result<Nlp> {
    let predictive: Vec<(f64, f64)> = samples
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(ReaggError::InvalidInput("empty sample set".into()));
            }
            Ok((mean(s), crate::stats::sample_variance(s).sqrt()))
        })
        .collect::<Result<_>>()?;
    nlp(&predictive, truth)
}

/// Fraction of truths inside closed intervals `[lower, upper]`.
pub fn coverage(intervals: &[(f64, f64)], truth: &[f64]) -> Result<f64> {
    check_len("intervals/truth length", truth.len(), intervals.len())?;
    if truth.is_empty() {
        return Err(ReaggError::InvalidInput("metrics need at least one point".into()));
    }
    let mut hits = 0usize;
    for (&(lo, hi), &t) in intervals.iter().zip(truth) {
        if !(lo <= hi) {
            return Err(ReaggError::InvalidInput(format!("interval [{lo}, {hi}] is inverted")));
        }
        hits += usize::from(lo <= t && t <= hi);
    }
    Ok(hits as f64 / truth.len() as f64)
}
