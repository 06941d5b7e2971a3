//! File formats: CSV count vectors, covariate tables, allocation edge lists
//! and point records; JSON geometry, hierarchy, model and job documents;
//! CSV/JSON outputs for summaries, correspondences and samples.

use std::collections::HashSet;
use std::fmt::Write as _;

use base64::Engine as _;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationMatrix, CountVector};
use crate::conditioning::Strategy;
use crate::correspondence::CorrespondenceMatrix;
use crate::error::{ReaggError, Result};
use crate::geometry::{HierarchyTree, PointRecord, Polygon};
use crate::model::{
    CovariateTable, FitOptions, LatentDistribution, LikelihoodKind, Link, LinearModel, Standardizer, Weights,
};
use crate::pipeline::{Learning, Method, PredictiveSummary, QuantilePair, ReaggregationJob};

struct Table {
    header: Vec<String>,
    /// `(line number, fields)`
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(source: &str, text: &str, min_columns: usize) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let csv_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line());
        ReaggError::parse(source, line, e.to_string())
    };
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header.len() < min_columns {
        return Err(ReaggError::parse(
            source,
            Some(1),
            format!("expected at least {min_columns} columns, found {}", header.len()),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(Table { header, rows })
}

fn parse_number(source: &str, line: u64, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| ReaggError::parse(source, Some(line), format!("`{field}` is not a finite number")))
}

fn check_unique<'a>(source: &str, ids: impl Iterator<Item = (u64, &'a String)>) -> Result<()> {
    let mut seen = HashSet::new();
    for (line, id) in ids {
        if !seen.insert(id) {
            return Err(ReaggError::parse(source, Some(line), format!("duplicate id `{id}`")));
        }
    }
    Ok(())
}

/// Count vector from `region_id,value` rows.
pub fn parse_counts_csv(source: &str, text: &str) -> Result<CountVector> {
    let table = read_table(source, text, 2)?;
    check_unique(source, table.rows.iter().map(|(l, r)| (*l, &r[0])))?;
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        ids.push(row[0].clone());
        values.push(parse_number(source, *line, &row[1])?);
    }
    CountVector::new(ids, values)
}

/// Covariate table from `base_id,<column>...` rows.
pub fn parse_covariates_csv(source: &str, text: &str) -> Result<CovariateTable> {
    let table = read_table(source, text, 2)?;
    check_unique(source, table.rows.iter().map(|(l, r)| (*l, &r[0])))?;
    let columns = table.header[1..].to_vec();
    let (n, d) = (table.rows.len(), columns.len());
    let mut values = DMatrix::zeros(n, d);
    let mut ids = Vec::with_capacity(n);
    for (i, (line, row)) in table.rows.iter().enumerate() {
        ids.push(row[0].clone());
        for j in 0..d {
            values[(i, j)] = parse_number(source, *line, &row[j + 1])?;
        }
    }
    CovariateTable::new(ids, columns, values)
}

/// `(base_id, group_id)` pairs from an edge list.
pub fn parse_assignment_csv(source: &str, text: &str) -> Result<Vec<(String, String)>> {
    let table = read_table(source, text, 2)?;
    Ok(table.rows.into_iter().map(|(_, r)| (r[0].clone(), r[1].clone())).collect())
}

/// Base ids in first-appearance order.
pub fn base_ids_of(pairs: &[(String, String)]) -> Vec<String> {
    let mut seen = HashSet::new();
    pairs
        .iter()
        .filter(|(b, _)| seen.insert(b.as_str()))
        .map(|(b, _)| b.clone())
        .collect()
}

/// Point records from `x,y[,weight]` rows.
pub fn parse_points_csv(source: &str, text: &str) -> Result<Vec<PointRecord>> {
    let table = read_table(source, text, 2)?;
    table
        .rows
        .iter()
        .map(|(line, row)| {
            let x = parse_number(source, *line, &row[0])?;
            let y = parse_number(source, *line, &row[1])?;
            let w = match row.get(2).map(String::as_str) {
                None | Some("") => 1.0,
                Some(f) => parse_number(source, *line, f)?,
            };
            Ok(PointRecord::weighted(x, y, w))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDocument {
    pub regions: Vec<Polygon>,
}

/// Regions from `{"regions": [{"id", "ring"}]}`, validated.
pub fn parse_geometry_json(source: &str, text: &str) -> Result<Vec<Polygon>> {
    let doc: GeometryDocument =
        serde_json::from_str(text).map_err(|e| ReaggError::parse(source, Some(e.line() as u64), e.to_string()))?;
    doc.regions
        .into_iter()
        .map(|p| Polygon::new(p.id, p.exterior))
        .collect()
}

pub fn parse_hierarchy_json(source: &str, text: &str) -> Result<HierarchyTree> {
    let tree: HierarchyTree =
        serde_json::from_str(text).map_err(|e| ReaggError::parse(source, Some(e.line() as u64), e.to_string()))?;
    tree.validate()?;
    Ok(tree)
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `dest_id,expectation,lower,upper,sd`; absent values are empty fields.
pub fn summary_csv(summary: &PredictiveSummary) -> String {
    let mut out = String::from("dest_id,expectation,lower,upper,sd\n");
    for r in &summary.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_escape(&r.dest_id),
            r.expectation,
            opt_field(r.lower),
            opt_field(r.upper),
            opt_field(r.sd)
        );
    }
    out
}

pub fn diagnostics_json(summary: &PredictiveSummary) -> String {
    serde_json::to_string_pretty(&summary.metadata).expect("metadata serialises")
}

pub fn counts_csv(v: &CountVector) -> String {
    let mut out = String::from("region_id,value\n");
    for (id, x) in v.ids.iter().zip(&v.values) {
        let _ = writeln!(out, "{},{x}", csv_escape(id));
    }
    out
}

pub fn assignment_csv(a: &AggregationMatrix) -> String {
    let mut out = String::from("base_id,group_id\n");
    for (b, id) in a.base_ids().iter().enumerate() {
        let _ = writeln!(out, "{},{}", csv_escape(id), csv_escape(&a.group_ids()[a.group_of(b)]));
    }
    out
}

/// `source_id,dest_id,weight`, nonzero entries only.
pub fn correspondence_csv(c: &CorrespondenceMatrix) -> String {
    let mut out = String::from("source_id,dest_id,weight\n");
    for (s, d, w) in c.entries() {
        let _ = writeln!(out, "{},{},{w}", csv_escape(&c.source_ids()[s]), csv_escape(&c.dest_ids()[d]));
    }
    out
}

/// Rows are samples, columns base regions.
pub fn samples_csv(samples: &DMatrix<f64>, base_ids: &[String]) -> Result<String> {
    crate::error::check_len("sample columns", base_ids.len(), samples.ncols())?;
    let mut out = base_ids.iter().map(|s| csv_escape(s)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in samples.row_iter() {
        let fields: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Serialisable form of a fitted [`LinearModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default)]
    pub features: Vec<String>,
    pub likelihood: LikelihoodKind,
    pub link: Link,
    pub weight_mean: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight_cov: Option<Vec<Vec<f64>>>,
    pub lambda: f64,
    pub standardizer: Standardizer,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub log_evidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub condition_number: Option<f64>,
}

impl ModelDocument {
    pub fn from_model(model: &LinearModel, features: Vec<String>) -> Self {
        let weight_cov = match &model.weights {
            Weights::Point(_) => None,
            Weights::Gaussian { cov, .. } => Some(cov.row_iter().map(|r| r.iter().copied().collect()).collect()),
        };
        Self {
            features,
            likelihood: model.likelihood.clone(),
            link: model.link,
            weight_mean: model.weights.mean().iter().copied().collect(),
            weight_cov,
            lambda: model.lambda,
            standardizer: model.standardizer.clone(),
            log_evidence: model.log_evidence,
            condition_number: model.condition_number,
        }
    }

    pub fn into_model(self) -> Result<LinearModel> {
        let d = self.weight_mean.len();
        if self.standardizer.shift.len() != d || self.standardizer.scale.len() != d {
            return Err(ReaggError::InvalidInput(format!(
                "standardizer covers {} columns but the model has {d} weights",
                self.standardizer.shift.len()
            )));
        }
        let mean = DVector::from_vec(self.weight_mean);
        let weights = match self.weight_cov {
            None => Weights::Point(mean),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(ReaggError::InvalidInput(format!("weight covariance must be {d}×{d}")));
                }
                Weights::Gaussian {
                    mean,
                    cov: DMatrix::from_row_iterator(d, d, rows.into_iter().flatten()),
                }
            }
        };
        let mut model = LinearModel::with_point_weights(self.link, vec![0.0; d], self.likelihood);
        model.weights = weights;
        model.lambda = self.lambda;
        model.standardizer = self.standardizer;
        model.log_evidence = self.log_evidence;
        model.condition_number = self.condition_number;
        Ok(model)
    }
}

/// A CSV payload: a file path, inline text, or base64-encoded text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputRef {
    Path(String),
    File { path: String },
    Inline { csv: String },
    Base64 { csv_base64: String },
}

impl InputRef {
    /// Paths are only honoured when `allow_paths` is set.
    pub fn load(&self, allow_paths: bool) -> Result<String> {
        match self {
            InputRef::Path(path) | InputRef::File { path } => {
                if !allow_paths {
                    return Err(ReaggError::InvalidInput(format!(
                        "file path `{path}` not accepted here; embed the CSV inline or base64"
                    )));
                }
                std::fs::read_to_string(path)
                    .map_err(|e| ReaggError::InvalidInput(format!("cannot read `{path}`: {e}")))
            }
            InputRef::Inline { csv } => Ok(csv.clone()),
            InputRef::Base64 { csv_base64 } => {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(csv_base64.trim())
                    .map_err(|e| ReaggError::InvalidInput(format!("invalid base64 payload: {e}")))?;
                String::from_utf8(bytes).map_err(|_| ReaggError::InvalidInput("base64 payload is not UTF-8".into()))
            }
        }
    }

    /// Short label used in parse errors.
    pub fn label(&self, field: &str) -> String {
        match self {
            InputRef::Path(path) | InputRef::File { path } => path.clone(),
            _ => field.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobInputs {
    /// `region_id,value` counts on the source geometry.
    pub source_counts: Option<InputRef>,
    /// `base_id,<column>...` covariates.
    pub covariates: Option<InputRef>,
    /// `base_id,source_id` edge list.
    pub source_map: Option<InputRef>,
    /// `base_id,dest_id` edge list; the base geometry itself when absent.
    pub dest_map: Option<InputRef>,
}

/// Explicit latent distribution, ordered like the base regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Gaussian {
        mean: Vec<f64>,
        #[serde(default)]
        variance: Option<Vec<f64>>,
        #[serde(default)]
        cov: Option<Vec<Vec<f64>>>,
    },
    Poisson {
        rates: Vec<f64>,
    },
    Binomial {
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodName {
    #[default]
    Gaussian,
    Poisson,
    Binomial,
}

impl std::str::FromStr for LikelihoodName {
    type Err = ReaggError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "poisson" => Ok(Self::Poisson),
            "binomial" => Ok(Self::Binomial),
            other => Err(ReaggError::InvalidInput(format!(
                "unknown likelihood `{other}` (expected gaussian, poisson or binomial)"
            ))),
        }
    }
}

/// JSON job document. Every field except `inputs` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobSpec {
    pub inputs: JobInputs,
    pub method: Method,
    pub strategy: Option<Strategy>,
    pub learning: Learning,
    pub likelihood: LikelihoodName,
    pub noise_variance: f64,
    /// Binomial populations come from this covariate column.
    pub population_column: String,
    pub quantiles: QuantilePair,
    pub seed: u64,
    pub samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub intercept: bool,
    pub nonnegative: Option<bool>,
    pub weight_column: Option<String>,
    pub weights: Option<Vec<f64>>,
    pub fit: FitOptions,
    pub diagnostic_folds: usize,
    pub prior: Option<PriorSpec>,
}

impl Default for JobSpec {
    fn default() -> Self {
        Self {
            inputs: JobInputs::default(),
            method: Method::Probabilistic,
            strategy: None,
            learning: Learning::Bayes,
            likelihood: LikelihoodName::Gaussian,
            noise_variance: 1.0,
            population_column: "population".into(),
            quantiles: QuantilePair::default(),
            seed: 0,
            samples: 5000,
            burn_in: 1000,
            thinning: 1,
            chains: 1,
            intercept: true,
            nonnegative: None,
            weight_column: None,
            weights: None,
            fit: FitOptions::default(),
            diagnostic_folds: 5,
            prior: None,
        }
    }
}

fn required<'a>(field: &str, r: &'a Option<InputRef>) -> Result<&'a InputRef> {
    r.as_ref()
        .ok_or_else(|| ReaggError::InvalidInput(format!("job input `{field}` is required")))
}

fn load(field: &str, r: &InputRef, allow_paths: bool) -> Result<(String, String)> {
    Ok((r.label(field), r.load(allow_paths)?))
}

impl JobSpec {
    pub fn from_json(source: &str, text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ReaggError::parse(source, Some(e.line() as u64), e.to_string()))
    }

    /// Loads and parses every input, producing a validated job.
    pub fn resolve(&self, allow_paths: bool) -> Result<ReaggregationJob> {
        let (label, text) = load("source_counts", required("source_counts", &self.inputs.source_counts)?, allow_paths)?;
        let counts = parse_counts_csv(&label, &text)?;
        let (label, text) = load("source_map", required("source_map", &self.inputs.source_map)?, allow_paths)?;
        let source_pairs = parse_assignment_csv(&label, &text)?;
        let covariates = match &self.inputs.covariates {
            Some(r) => {
                let (label, text) = load("covariates", r, allow_paths)?;
                Some(parse_covariates_csv(&label, &text)?)
            }
            None => None,
        };
        let base_ids = match &covariates {
            Some(x) => x.base_ids.clone(),
            None => base_ids_of(&source_pairs),
        };
        let a_sb = AggregationMatrix::from_labels(&base_ids, &source_pairs, Some(&counts.ids))?;
        let a_db = match &self.inputs.dest_map {
            Some(r) => {
                let (label, text) = load("dest_map", r, allow_paths)?;
                AggregationMatrix::from_labels(&base_ids, &parse_assignment_csv(&label, &text)?, None)?
            }
            None => AggregationMatrix::identity(base_ids.len())
                .with_group_ids(base_ids.clone())?
                .with_base_ids(base_ids.clone())?,
        };

        let likelihood = match self.likelihood {
            LikelihoodName::Gaussian => LikelihoodKind::Gaussian {
                noise_variance: self.noise_variance,
            },
            LikelihoodName::Poisson => LikelihoodKind::Poisson,
            LikelihoodName::Binomial => {
                let population = covariates
                    .as_ref()
                    .and_then(|x| x.column(&self.population_column))
                    .ok_or_else(|| {
                        ReaggError::InvalidInput(format!(
                            "binomial likelihood needs a `{}` covariate column",
                            self.population_column
                        ))
                    })?;
                LikelihoodKind::Binomial { population }
            }
        };
        let prior = self.prior.as_ref().map(|p| prior_latent(p, &likelihood)).transpose()?;

        let mut job = ReaggregationJob::new(counts, covariates, a_sb, a_db, likelihood);
        job.method = self.method;
        job.strategy = self.strategy;
        job.learning = self.learning;
        job.quantiles = self.quantiles;
        job.seed = self.seed;
        job.n_samples = self.samples;
        job.burn_in = self.burn_in;
        job.thinning = self.thinning;
        job.chains = self.chains;
        job.fit = self.fit.clone();
        job.intercept = self.intercept;
        job.nonnegative = self.nonnegative;
        job.prior = prior;
        job.weight_column = self.weight_column.clone();
        job.weight_vector = self.weights.clone();
        job.diagnostic_folds = self.diagnostic_folds;
        job.validate()?;
        Ok(job)
    }
}

fn prior_latent(p: &PriorSpec, likelihood: &LikelihoodKind) -> Result<LatentDistribution> {
    let latent = match p {
        PriorSpec::Gaussian { mean, variance, cov } => {
            let n = mean.len();
            let cov = match (variance, cov) {
                (Some(v), None) => {
                    crate::error::check_len("prior variance", n, v.len())?;
                    DMatrix::from_diagonal(&DVector::from_column_slice(v))
                }
                (None, Some(rows)) => {
                    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                        return Err(ReaggError::InvalidInput(format!("prior covariance must be {n}×{n}")));
                    }
                    DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied())
                }
                _ => {
                    return Err(ReaggError::InvalidInput(
                        "a Gaussian prior needs exactly one of `variance` or `cov`".into(),
                    ))
                }
            };
            LatentDistribution::Gaussian {
                mean: DVector::from_column_slice(mean),
                cov,
            }
        }
        PriorSpec::Poisson { rates } => LatentDistribution::Poisson { rates: rates.clone() },
        PriorSpec::Binomial { probs } => match likelihood {
            LikelihoodKind::Binomial { population } => LatentDistribution::Binomial {
                population: population.clone(),
                probs: probs.clone(),
            },
            _ => {
                return Err(ReaggError::InvalidInput(
                    "a binomial prior needs the binomial likelihood".into(),
                ))
            }
        },
    };
    latent.validate()?;
    Ok(latent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::reaggregate;

    fn inline(s: &str) -> Option<InputRef> {
        Some(InputRef::Inline { csv: s.into() })
    }

    #[test]
    fn counts_round_trip_and_errors() {
        let v = parse_counts_csv("c.csv", "region_id,value\na,1.5\nb,2\n").unwrap();
        assert_eq!(v.ids, vec!["a", "b"]);
        assert_eq!(parse_counts_csv("c.csv", &counts_csv(&v)).unwrap(), v);
        let err = parse_counts_csv("c.csv", "region_id,value\na,1\nb,oops\n").unwrap_err();
        assert_eq!(err.to_string(), "c.csv line 3: `oops` is not a finite number");
        let err = parse_counts_csv("c.csv", "region_id,value\na,1\na,2\n").unwrap_err();
        assert!(err.to_string().contains("line 3") && err.to_string().contains("duplicate"));
        let err = parse_counts_csv("c.csv", "region_id,value\na,1\nb\n").unwrap_err();
        assert!(matches!(err, ReaggError::Parse { line: Some(3), .. }), "{err}");
    }

    #[test]
    fn covariates_and_points() {
        let x = parse_covariates_csv("x", "base_id,pop,age\nb0,10,1\nb1,20,2\n").unwrap();
        assert_eq!(x.columns, vec!["pop", "age"]);
        assert_eq!(x.values[(1, 0)], 20.0);
        let p = parse_points_csv("p", "x,y,weight\n0,0,2\n1,1,\n").unwrap();
        assert_eq!(p[0].weight, 2.0);
        assert_eq!(p[1].weight, 1.0);
        assert_eq!(parse_points_csv("p", "x,y\n0.5,0.25\n").unwrap()[0].y, 0.25);
    }

    #[test]
    fn geometry_and_hierarchy_documents() {
        let polys =
            parse_geometry_json("g", r#"{"regions":[{"id":"A","ring":[[0,0],[1,0],[1,1],[0,1]]}]}"#).unwrap();
        assert_eq!(polys[0].area(), 1.0);
        assert!(parse_geometry_json("g", r#"{"regions":[{"id":"A","ring":[[0,0],[1,0]]}]}"#).is_err());
        let h = parse_hierarchy_json("h", r#"{"levels":["MB","SA1"],"edges":[["SA1","MB"]]}"#).unwrap();
        assert_eq!(h.levels.len(), 2);
    }

    #[test]
    fn model_document_round_trip() {
        let mut model = LinearModel::with_point_weights(Link::Log, vec![0.5, -1.0], LikelihoodKind::Poisson);
        model.weights = Weights::Gaussian {
            mean: DVector::from_vec(vec![0.5, -1.0]),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]),
        };
        let doc = ModelDocument::from_model(&model, vec!["a".into(), "b".into()]);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_model().unwrap().weights, model.weights);
    }

    #[test]
    fn input_refs() {
        let b64 = InputRef::Base64 {
            csv_base64: base64::engine::general_purpose::STANDARD.encode("a,b\n"),
        };
        assert_eq!(b64.load(false).unwrap(), "a,b\n");
        let path: InputRef = serde_json::from_str(r#""counts.csv""#).unwrap();
        assert_eq!(path, InputRef::Path("counts.csv".into()));
        assert!(path.load(false).is_err());
        let obj: InputRef = serde_json::from_str(r#"{"csv":"x"}"#).unwrap();
        assert_eq!(obj.load(false).unwrap(), "x");
    }

    #[test]
    fn toy_job_spec_resolves() {
        let spec = JobSpec {
            inputs: JobInputs {
                source_counts: inline("region_id,value\nS,100\n"),
                source_map: inline("base_id,group_id\nb1,S\nb2,S\n"),
                ..JobInputs::default()
            },
            prior: Some(PriorSpec::Gaussian {
                mean: vec![50.0, 35.0],
                variance: Some(vec![200.0, 100.0]),
                cov: None,
            }),
            ..JobSpec::default()
        };
        let summary = reaggregate(&spec.resolve(false).unwrap()).unwrap();
        assert_eq!(summary.rows[0].dest_id, "b1");
        assert!((summary.rows[0].expectation - 60.0).abs() < 1e-9);
        let csv = summary_csv(&summary);
        assert!(csv.starts_with("dest_id,expectation,lower,upper,sd\nb1,"));
        let json: serde_json::Value = serde_json::from_str(&diagnostics_json(&summary)).unwrap();
        assert_eq!(json["strategy"], "exact");
    }

    #[test]
    fn weighted_job_spec() {
        let spec: JobSpec = serde_json::from_str(
            r#"{"method":"weighted","likelihood":"poisson","inputs":{
                "source_counts":{"csv":"region_id,value\ns0,5\ns1,100\n"},
                "covariates":{"csv":"base_id,population\nb0,10\nb1,20\nb2,30\n"},
                "source_map":{"csv":"base_id,group_id\nb0,s0\nb1,s1\nb2,s1\n"},
                "dest_map":{"csv":"base_id,group_id\nb0,d0\nb1,d0\nb2,d1\n"}}}"#,
        )
        .unwrap();
        let s = reaggregate(&spec.resolve(false).unwrap()).unwrap();
        assert_eq!(s.expectations(), vec![45.0, 60.0]);
        assert_eq!(summary_csv(&s), "dest_id,expectation,lower,upper,sd\nd0,45,,,\nd1,60,,,\n");
        assert!(serde_json::from_str::<JobSpec>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = JobSpec {
            inputs: JobInputs {
                source_counts: inline("region_id,value\nS,100\n"),
                source_map: inline("base_id,group_id\nb1,S\nb2,S\n"),
                ..JobInputs::default()
            },
            prior: Some(PriorSpec::Gaussian {
                mean: vec![50.0, 35.0, 1.0],
                variance: Some(vec![200.0, 100.0, 1.0]),
                cov: None,
            }),
            ..JobSpec::default()
        };
        assert!(matches!(spec.resolve(false), Err(ReaggError::DimensionMismatch { .. })));
    }
}
