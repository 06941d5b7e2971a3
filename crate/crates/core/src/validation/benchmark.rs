use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{coverage, nlp, r2, rmse, sse, GeneratedScenario};
use crate::conditioning::Strategy;
use crate::error::{ReaggError, Result};
use crate::pipeline::{reaggregate, Learning, Method, PredictiveSummary, QuantilePair, ReaggregationJob};

/// A method under benchmark: `weighted`, `probabilistic`, or
/// `probabilistic:<strategy>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Weighted,
    Probabilistic(Option<Strategy>),
}

impl BenchMethod {
    pub fn name(&self) -> String {
        match self {
            BenchMethod::Weighted => "weighted".into(),
            BenchMethod::Probabilistic(None) => "probabilistic".into(),
            BenchMethod::Probabilistic(Some(s)) => format!("probabilistic:{}", s.name()),
        }
    }
}

impl std::str::FromStr for BenchMethod {
    type Err = ReaggError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "weighted" => Ok(BenchMethod::Weighted),
            None if s == "probabilistic" => Ok(BenchMethod::Probabilistic(None)),
            Some(("probabilistic", strategy)) => Ok(BenchMethod::Probabilistic(Some(strategy.parse()?))),
            _ => Err(ReaggError::InvalidInput(format!(
                "unknown method `{s}` (expected weighted, probabilistic or probabilistic:<strategy>)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkOptions {
    pub n_samples: usize,
    pub burn_in: usize,
    pub quantiles: QuantilePair,
    pub learning: Learning,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            burn_in: 500,
            quantiles: QuantilePair::default(),
            learning: Learning::Bayes,
        }
    }
}

/// Scores for one method on one scenario. Interval metrics are absent
/// for point-estimate methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub method: String,
    pub r2: f64,
    pub rmse: f64,
    pub sse: f64,
    pub nlp: Option<f64>,
    pub nlp_clamped: bool,
    pub coverage: Option<f64>,
}

/// Job for one method; learning sees only the source counts and geometry.
pub fn benchmark_job(g: &GeneratedScenario, method: BenchMethod, opts: &BenchmarkOptions) -> ReaggregationJob {
    let mut job = ReaggregationJob::new(
        g.y_s.clone(),
        Some(g.x_b.clone()),
        g.a_sb.clone(),
        g.a_db.clone(),
        g.likelihood.clone(),
    );
    job.seed = g.scenario.seed;
    job.n_samples = opts.n_samples;
    job.burn_in = opts.burn_in;
    job.quantiles = opts.quantiles;
    job.learning = opts.learning;
    job.fit.link = Some(g.scenario.link());
    job.weight_column = Some("population".into());
    match method {
        BenchMethod::Weighted => job.method = Method::Weighted,
        BenchMethod::Probabilistic(strategy) => {
            job.method = Method::Probabilistic;
            job.strategy = strategy;
        }
    }
    job
}

fn score(name: &str, method: BenchMethod, summary: &PredictiveSummary, truth: &[f64]) -> Result<MetricsRow> {
    let predicted = summary.expectations();
    let intervals: Option<Vec<(f64, f64)>> = summary.rows.iter().map(|r| Some((r.lower?, r.upper?))).collect();
    let spreads: Option<Vec<(f64, f64)>> = summary.rows.iter().map(|r| Some((r.expectation, r.sd?))).collect();
    let nlp = spreads.map(|p| nlp(&p, truth)).transpose()?;
    Ok(MetricsRow {
        scenario: name.into(),
        method: method.name(),
        r2: r2(&predicted, truth)?,
        rmse: rmse(&predicted, truth)?,
        sse: sse(&predicted, truth)?,
        nlp: nlp.map(|n| n.value),
        nlp_clamped: nlp.is_some_and(|n| n.clamped),
        coverage: intervals.map(|i| coverage(&i, truth)).transpose()?,
    })
}

/// Runs each method on a generated scenario and scores the destination
/// predictions against the ground truth.
pub fn run_benchmark(
    g: &GeneratedScenario,
    methods: &[BenchMethod],
    opts: &BenchmarkOptions,
) -> Result<Vec<MetricsRow>> {
    methods
        .iter()
        .map(|&m| {
            let summary = reaggregate(&benchmark_job(g, m, opts))?;
            score(&g.scenario.name, m, &summary, &g.y_d.values)
        })
        .collect()
}

/// CSV with header `scenario,method,r2,rmse,sse,nlp,coverage`; absent
/// metrics are empty fields.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("scenario,method,r2,rmse,sse,nlp,coverage\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario,
            r.method,
            r.r2,
            r.rmse,
            r.sse,
            opt(r.nlp),
            opt(r.coverage)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validation::{generate_scenario, OverlapPattern, ScenarioLikelihood, SyntheticScenario};

    #[test]
    fn method_names_round_trip() {
        for s in ["weighted", "probabilistic", "probabilistic:mcmc", "probabilistic:exact"] {
            assert_eq!(s.parse::<BenchMethod>().unwrap().name(), s);
        }
        assert!("bogus".parse::<BenchMethod>().is_err());
        assert!("probabilistic:bogus".parse::<BenchMethod>().is_err());
    }

    #[test]
    fn perfect_information_is_exact() {
        let g = generate_scenario(&SyntheticScenario {
            name: "identity".into(),
            n_base: 60,
            n_source: 60,
            n_dest: 20,
            pattern: OverlapPattern::Nested,
            ..SyntheticScenario::default()
        })
        .unwrap();
        let rows = run_benchmark(
            &g,
            &[BenchMethod::Weighted, BenchMethod::Probabilistic(None)],
            &BenchmarkOptions {
                n_samples: 200,
                burn_in: 50,
                ..BenchmarkOptions::default()
            },
        )
        .unwrap();
        for r in &rows {
            assert!((r.r2 - 1.0).abs() < 1e-12, "{r:?}");
        }
        assert_eq!(rows[1].coverage, Some(1.0));
    }

    #[test]
    fn gaussian_exact_benchmark_and_csv() {
        let g = generate_scenario(&SyntheticScenario {
            name: "gauss".into(),
            n_base: 200,
            n_source: 40,
            n_dest: 100,
            likelihood: ScenarioLikelihood::Gaussian,
            intercept: 5.0,
            weights: vec![2.0, -1.0],
            ..SyntheticScenario::default()
        })
        .unwrap();
        let rows = run_benchmark(
            &g,
            &[BenchMethod::Weighted, BenchMethod::Probabilistic(Some(Strategy::Exact))],
            &BenchmarkOptions::default(),
        )
        .unwrap();
        assert!(rows[1].r2 > rows[0].r2);
        assert!(rows[1].coverage.unwrap() > 0.7);
        let csv = metrics_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("scenario,method,r2,rmse,sse,nlp,coverage"));
        let weighted = lines.next().unwrap();
        assert!(weighted.starts_with("gauss,weighted,") && weighted.ends_with(",,"));
        assert!(lines.next().unwrap().starts_with("gauss,probabilistic:exact,"));
    }
}
