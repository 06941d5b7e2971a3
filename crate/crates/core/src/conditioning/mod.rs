//! Conditioning the latent distribution on the observed aggregates: the
//! generative distribution over `Y_b` is restricted to the affine set
//! `{ Ȳ + N v }` of vectors with `A_sb Y_b = Y_s`.
//!
//! Four strategies are provided: exact Gaussian conditioning, blockwise
//! Metropolis sampling in frame coordinates, sample-then-project, and a
//! Gaussian variational surrogate on the frame.

mod exact;
mod mcmc;
mod projection;
mod target;
mod variational;

pub use exact::{condition_exact, condition_gaussian_exact};
pub use mcmc::condition_mcmc;
pub use projection::condition_projection;
pub use variational::{condition_variational, VariationalConfig};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::aggregation::{AggregationMatrix, NullSpaceFrame};
use crate::error::{check_len, ReaggError, Result};

/// Conditioning strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Exact,
    Mcmc,
    Variational,
    Projection,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Exact => "exact",
            Strategy::Mcmc => "mcmc",
            Strategy::Variational => "variational",
            Strategy::Projection => "projection",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = ReaggError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Strategy::Exact),
            "mcmc" => Ok(Strategy::Mcmc),
            "variational" => Ok(Strategy::Variational),
            "projection" => Ok(Strategy::Projection),
            other => Err(ReaggError::InvalidInput(format!(
                "unknown strategy `{other}` (expected exact, mcmc, variational or projection)"
            ))),
        }
    }
}

/// Random-walk proposal scale: tuned during burn-in, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ProposalScale {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for ProposalScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ProposalScale::Auto => s.serialize_str("auto"),
            ProposalScale::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ProposalScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(ProposalScale::Fixed(v)),
            Repr::Text(t) if t == "auto" => Ok(ProposalScale::Auto),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "proposal_scale must be a positive number or \"auto\", got `{t}`"
            ))),
        }
    }
}

/// Sampler settings shared by the sampling strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Retained samples (after burn-in and thinning), pooled over chains.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal_scale: ProposalScale,
    pub seed: u64,
    /// Independent chains run in parallel with seeds `seed, seed + 1, ...`.
    pub chains: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            burn_in: 1000,
            thinning: 1,
            proposal_scale: ProposalScale::Auto,
            seed: 0,
            chains: 1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(ReaggError::InvalidInput("n_samples must be positive".into()));
        }
        if self.thinning == 0 {
            return Err(ReaggError::InvalidInput("thinning must be positive".into()));
        }
        if self.chains == 0 || self.chains > self.n_samples {
            return Err(ReaggError::InvalidInput(format!(
                "chains must be between 1 and n_samples, got {}",
                self.chains
            )));
        }
        if let ProposalScale::Fixed(s) = self.proposal_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ReaggError::InvalidInput(format!("proposal scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// How the conditioned distribution is held.
#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    /// `n_samples × n_base`, every row on the solution set.
    Samples(DMatrix<f64>),
    /// `V_f ~ N(q_mean, q_cov)`, pushed forward through the frame.
    Gaussian { q_mean: DVector<f64>, q_cov: DMatrix<f64> },
}

/// Run statistics reported alongside a conditioned posterior.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditioningDiagnostics {
    pub strategy: String,
    pub n_free: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    /// Largest difference between first- and second-half sample means,
    /// in units of the marginal standard deviation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_mean_discrepancy: Option<f64>,
    /// Fraction of projected samples that needed clipping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clipping_rate: Option<f64>,
    /// Projected samples repaired by shrinking toward `Ȳ`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback_samples: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub elbo_trace: Vec<f64>,
    /// Monte Carlo estimate of the surrogate's mass outside `Y_b ≥ 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infeasible_mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier: Option<bool>,
    /// Largest relative violation of `A Y_b = Y_s` in the output.
    pub max_constraint_violation: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl ConditioningDiagnostics {
    fn new(strategy: Strategy, n_free: usize) -> Self {
        Self {
            strategy: strategy.name().to_string(),
            n_free,
            ..Self::default()
        }
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

/// The latent distribution restricted to the solution set.
#[derive(Debug, Clone)]
pub struct ConditionedPosterior {
    pub representation: Representation,
    pub frame: NullSpaceFrame,
    pub diagnostics: ConditioningDiagnostics,
}

/// A conditioned posterior aggregated to another geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregatedPosterior {
    /// `n_samples × n_groups`.
    Samples(DMatrix<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl ConditionedPosterior {
    fn from_gaussian(
        frame: NullSpaceFrame,
        q_mean: DVector<f64>,
        q_cov: DMatrix<f64>,
        mut diagnostics: ConditioningDiagnostics,
    ) -> Result<Self> {
        let mean = frame.parameterize(q_mean.as_slice())?;
        diagnostics.max_constraint_violation = frame.constraint_violation(&mean)?;
        Ok(Self {
            representation: Representation::Gaussian { q_mean, q_cov },
            frame,
            diagnostics,
        })
    }

    fn from_samples(frame: NullSpaceFrame, samples: DMatrix<f64>, mut diagnostics: ConditioningDiagnostics) -> Result<Self> {
        let mut worst = 0.0f64;
        for row in samples.row_iter() {
            let y: Vec<f64> = row.iter().copied().collect();
            worst = worst.max(frame.constraint_violation(&y)?);
        }
        diagnostics.max_constraint_violation = worst;
        Ok(Self {
            representation: Representation::Samples(samples),
            frame,
            diagnostics,
        })
    }

    /// The degenerate posterior at `Ȳ` when the frame has no free coordinates.
    fn point(frame: NullSpaceFrame, strategy: Strategy) -> Result<Self> {
        let diagnostics = ConditioningDiagnostics::new(strategy, 0);
        Self::from_gaussian(frame, DVector::zeros(0), DMatrix::zeros(0, 0), diagnostics)
    }

    pub fn n_base(&self) -> usize {
        self.frame.n_base()
    }

    pub fn samples(&self) -> Option<&DMatrix<f64>> {
        match &self.representation {
            Representation::Samples(s) => Some(s),
            Representation::Gaussian { .. } => None,
        }
    }

    /// Posterior mean of `Y_b`.
    pub fn mean(&self) -> Vec<f64> {
        match &self.representation {
            Representation::Samples(s) => s.row_mean().iter().copied().collect(),
            Representation::Gaussian { q_mean, .. } => self
                .frame
                .parameterize(q_mean.as_slice())
                .expect("frame dimension matches q_mean"),
        }
    }

    /// Per-base marginal variance of `Y_b`.
    pub fn marginal_variance(&self) -> Vec<f64> {
        match &self.representation {
            Representation::Samples(s) => {
                let n = s.nrows();
                if n < 2 {
                    return vec![0.0; s.ncols()];
                }
                let mean = s.row_mean();
                (0..s.ncols())
                    .map(|j| s.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64)
                    .collect()
            }
            Representation::Gaussian { q_cov, .. } => {
                let n = self.frame.basis.to_dense();
                let ns = &n * q_cov;
                (0..n.nrows()).map(|i| ns.row(i).dot(&n.row(i))).collect()
            }
        }
    }

    /// Pushes the posterior through `a` (e.g. `A_db`).
    pub fn aggregate(&self, a: &AggregationMatrix) -> Result<AggregatedPosterior> {
        check_len("aggregation base count", self.n_base(), a.n_base())?;
        match &self.representation {
            Representation::Samples(s) => Ok(AggregatedPosterior::Samples(a.aggregate_rows(&s.transpose())?.transpose())),
            Representation::Gaussian { q_cov, .. } => {
                let mean = DVector::from_vec(a.aggregate(&self.mean())?);
                // (A N)ᵀ column d is Nᵀ applied to the indicator of group d
                let n_free = self.frame.n_free();
                let mut an_t = DMatrix::zeros(n_free, a.n_groups());
                if n_free > 0 {
                    for d in 0..a.n_groups() {
                        let mut indicator = vec![0.0; a.n_base()];
                        for &m in a.members(d) {
                            indicator[m] = 1.0;
                        }
                        let col = self.frame.basis.apply_transpose(&indicator)?;
                        an_t.set_column(d, &DVector::from_vec(col));
                    }
                }
                let mut cov = an_t.transpose() * q_cov * &an_t;
                crate::stats::symmetrize(&mut cov);
                Ok(AggregatedPosterior::Gaussian { mean, cov })
            }
        }
    }
}

/// Conditions `latent` with the chosen strategy.
pub fn condition(
    latent: &crate::model::LatentDistribution,
    frame: &NullSpaceFrame,
    strategy: Strategy,
    cfg: &McmcConfig,
    nonnegative: bool,
) -> Result<ConditionedPosterior> {
    match strategy {
        Strategy::Exact => condition_exact(latent, frame),
        Strategy::Mcmc => condition_mcmc(latent, frame, cfg, nonnegative),
        Strategy::Projection => condition_projection(latent, frame, cfg.n_samples, cfg.seed, nonnegative),
        Strategy::Variational => condition_variational(latent, frame, &VariationalConfig::default(), nonnegative),
    }
}
