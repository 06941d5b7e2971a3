//! Synthetic unit-record scenarios on a one-dimensional strip of base
//! regions. Base region `b` covers `[b, b + 1)`; source and destination
//! regions are contiguous runs of base regions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationMatrix, CountVector};
use crate::error::{ReaggError, Result};
use crate::model::{CovariateTable, LikelihoodKind, Link};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPattern {
    /// The coarser geometry is a union of regions of the finer one.
    #[default]
    Nested,
    /// Source boundaries are offset so some source region straddles
    /// several destination regions.
    Misaligned,
}

/// Scenario likelihood family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioLikelihood {
    Gaussian,
    #[default]
    Poisson,
    Binomial,
}

/// Covariates are a `population` column plus `d` columns `x1..xd`, each a
/// mix of a smooth AR(1) field along the strip and independent noise. The
/// linear predictor is `intercept + population_weight·pop + Σ w_j x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticScenario {
    pub name: String,
    pub n_base: usize,
    pub n_source: usize,
    pub n_dest: usize,
    pub d: usize,
    pub intercept: f64,
    pub population_weight: f64,
    /// Weights on `x1..xd`; length `d`.
    pub weights: Vec<f64>,
    pub likelihood: ScenarioLikelihood,
    /// Defaults to the likelihood's canonical link.
    pub link: Option<Link>,
    /// Gaussian process noise variance.
    pub noise_variance: f64,
    /// Populations are uniform integers in this closed range.
    pub population_range: (u32, u32),
    /// AR(1) coefficient of the smooth covariate component.
    pub smoothness: f64,
    pub pattern: OverlapPattern,
    pub seed: u64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            n_base: 1000,
            n_source: 125,
            n_dest: 250,
            d: 2,
            intercept: 2.5,
            population_weight: 0.0,
            weights: vec![0.8, -0.4],
            likelihood: ScenarioLikelihood::Poisson,
            link: None,
            noise_variance: 1.0,
            population_range: (50, 150),
            smoothness: 0.9,
            pattern: OverlapPattern::Misaligned,
            seed: 0,
        }
    }
}

impl SyntheticScenario {
    pub fn link(&self) -> Link {
        self.link.unwrap_or(match self.likelihood {
            ScenarioLikelihood::Gaussian => Link::Identity,
            ScenarioLikelihood::Poisson => Link::Log,
            ScenarioLikelihood::Binomial => Link::Logit,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let infeasible = |m: String| Err(ReaggError::InvalidInput(format!("infeasible scenario: {m}")));
        if self.n_base == 0 || self.n_source == 0 || self.n_dest == 0 {
            return infeasible("region counts must be positive".into());
        }
        if self.n_source > self.n_base || self.n_dest > self.n_base {
            return infeasible(format!(
                "{} source and {} destination regions cannot partition {} base regions",
                self.n_source, self.n_dest, self.n_base
            ));
        }
        if self.weights.len() != self.d {
            return infeasible(format!("{} weights for {} covariates", self.weights.len(), self.d));
        }
        let (lo, hi) = self.population_range;
        if lo == 0 || lo > hi {
            return infeasible(format!("population range ({lo}, {hi}) must be positive and ordered"));
        }
        if !(0.0..1.0).contains(&self.smoothness) {
            return infeasible(format!("smoothness {} must lie in [0, 1)", self.smoothness));
        }
        if self.likelihood == ScenarioLikelihood::Gaussian && !(self.noise_variance > 0.0) {
            return infeasible("Gaussian noise variance must be positive".into());
        }
        let kind_ok = matches!(
            (self.likelihood, self.link()),
            (ScenarioLikelihood::Gaussian, Link::Identity)
                | (ScenarioLikelihood::Poisson, Link::Log | Link::IdentityFloor)
                | (ScenarioLikelihood::Binomial, Link::Logit)
        );
        if !kind_ok {
            return infeasible(format!("link {:?} does not fit the {:?} likelihood", self.link(), self.likelihood));
        }
        Ok(())
    }
}

/// One synthetic individual, located on the strip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub base: usize,
    pub position: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub scenario: SyntheticScenario,
    /// Individuals behind count scenarios; empty for Gaussian.
    pub records: Vec<UnitRecord>,
    pub x_b: CovariateTable,
    pub a_sb: AggregationMatrix,
    pub a_db: AggregationMatrix,
    pub y_b: Vec<f64>,
    pub y_s: CountVector,
    pub y_d: CountVector,
    /// The likelihood to fit with (binomial populations filled in).
    pub likelihood: LikelihoodKind,
}

/// Group index per base region from strictly increasing interior cuts.
fn partition_from_cuts(n: usize, cuts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    let mut g = 0;
    for b in 0..n {
        while g < cuts.len() && b >= cuts[g] {
            g += 1;
        }
        out.push(g);
    }
    out
}

/// `g - 1` interior cuts spreading `n` items evenly, shifted by at most `n / (2g)`.
fn even_cuts(n: usize, g: usize, offset: f64) -> Vec<usize> {
    (1..g)
        .map(|k| (k as f64 * n as f64 / g as f64 + offset).floor() as usize)
        .collect()
}

fn labelled(prefix: &str, assignment: &[usize], n_groups: usize) -> Result<AggregationMatrix> {
    AggregationMatrix::from_assignment(assignment, n_groups)?
        .with_group_ids((0..n_groups).map(|i| format!("{prefix}{i}")).collect())?
        .with_base_ids((0..assignment.len()).map(|i| format!("b{i}")).collect())
}

fn geometry(s: &SyntheticScenario) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = s.n_base;
    match s.pattern {
        OverlapPattern::Nested => {
            let (fine, coarse) = (s.n_source.max(s.n_dest), s.n_source.min(s.n_dest));
            let fine_of = partition_from_cuts(n, &even_cuts(n, fine, 0.0));
            let coarse_of: Vec<usize> = fine_of.iter().map(|&f| f * coarse / fine).collect();
            Ok(if s.n_source >= s.n_dest {
                (fine_of, coarse_of)
            } else {
                (coarse_of, fine_of)
            })
        }
        OverlapPattern::Misaligned => {
            let dest = partition_from_cuts(n, &even_cuts(n, s.n_dest, 0.0));
            let offset = (n as f64 / (2 * s.n_dest) as f64).min(n as f64 / (2 * s.n_source) as f64);
            let source = partition_from_cuts(n, &even_cuts(n, s.n_source, offset));
            let straddles = (1..n).any(|b| source[b] == source[b - 1] && dest[b] != dest[b - 1]);
            if !straddles {
                return Err(ReaggError::InvalidInput(
                    "infeasible scenario: no source region can straddle destination regions".into(),
                ));
            }
            Ok((source, dest))
        }
    }
}

/// Stationary AR(1) field with unit variance.
fn smooth_field(rng: &mut ChaCha8Rng, n: usize, rho: f64) -> Vec<f64> {
    let innovation = (1.0 - rho * rho).sqrt();
    let mut v = Vec::with_capacity(n);
    let mut x: f64 = rng.sample(StandardNormal);
    for _ in 0..n {
        v.push(x);
        x = rho * x + innovation * rng.sample::<f64, _>(StandardNormal);
    }
    v
}

/// Draws covariates, latent parameters and base counts, then aggregates to
/// the source and destination geometries. Deterministic per seed.
pub fn generate_scenario(s: &SyntheticScenario) -> Result<GeneratedScenario> {
    s.validate()?;
    let n = s.n_base;
    let (source_of, dest_of) = geometry(s)?;
    let a_sb = labelled("s", &source_of, s.n_source)?;
    let a_db = labelled("d", &dest_of, s.n_dest)?;

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let (lo, hi) = s.population_range;
    let population: Vec<f64> = (0..n).map(|_| rng.random_range(lo..=hi) as f64).collect();
    let mut columns = vec!["population".to_string()];
    let mut data = population.clone();
    let mix = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..s.d {
        columns.push(format!("x{}", j + 1));
        let field = smooth_field(&mut rng, n, s.smoothness);
        data.extend(field.iter().map(|f| mix * f + mix * rng.sample::<f64, _>(StandardNormal)));
    }
    let values = nalgebra::DMatrix::from_column_slice(n, s.d + 1, &data);
    let x_b = CovariateTable::new((0..n).map(|i| format!("b{i}")).collect(), columns, values)?;

    let link = s.link();
    let mut y_b = Vec::with_capacity(n);
    for (b, &pop) in population.iter().enumerate() {
        let eta = s.intercept
            + s.population_weight * pop
            + (0..s.d).map(|j| s.weights[j] * x_b.values[(b, j + 1)]).sum::<f64>();
        let z = link.inverse(eta);
        let y = match s.likelihood {
            ScenarioLikelihood::Gaussian => Normal::new(z, s.noise_variance.sqrt())
                .map_err(|e| ReaggError::Numerical(e.to_string()))?
                .sample(&mut rng),
            ScenarioLikelihood::Poisson if z <= 0.0 => 0.0,
            ScenarioLikelihood::Poisson => Poisson::new(z)
                .map_err(|e| ReaggError::Numerical(format!("Poisson rate {z}: {e}")))?
                .sample(&mut rng),
            ScenarioLikelihood::Binomial => Binomial::new(population[b] as u64, z)
                .map_err(|e| ReaggError::Numerical(format!("Binomial p {z}: {e}")))?
                .sample(&mut rng) as f64,
        };
        y_b.push(y);
    }

    let records = if s.likelihood == ScenarioLikelihood::Gaussian {
        Vec::new()
    } else {
        let mut records = Vec::with_capacity(y_b.iter().sum::<f64>() as usize);
        for (b, &y) in y_b.iter().enumerate() {
            for _ in 0..y as u64 {
                records.push(UnitRecord {
                    base: b,
                    position: b as f64 + rng.random::<f64>(),
                });
            }
        }
        records
    };

    let y_s = CountVector::new(a_sb.group_ids().to_vec(), a_sb.aggregate(&y_b)?)?;
    let y_d = CountVector::new(a_db.group_ids().to_vec(), a_db.aggregate(&y_b)?)?;
    let likelihood = match s.likelihood {
        ScenarioLikelihood::Gaussian => LikelihoodKind::Gaussian {
            noise_variance: s.noise_variance,
        },
        ScenarioLikelihood::Poisson => LikelihoodKind::Poisson,
        ScenarioLikelihood::Binomial => LikelihoodKind::Binomial { population },
    };
    Ok(GeneratedScenario {
        scenario: s.clone(),
        records,
        x_b,
        a_sb,
        a_db,
        y_b,
        y_s,
        y_d,
        likelihood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pattern: OverlapPattern) -> SyntheticScenario {
        SyntheticScenario {
            n_base: 4,
            n_source: 2,
            n_dest: 2,
            d: 1,
            weights: vec![0.5],
            intercept: 1.0,
            pattern,
            seed: 11,
            ..SyntheticScenario::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate_scenario(&small(OverlapPattern::Nested)).unwrap();
        let b = generate_scenario(&small(OverlapPattern::Nested)).unwrap();
        assert_eq!(a.y_b, b.y_b);
        assert_eq!(a.x_b.values, b.x_b.values);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn mass_is_conserved_and_records_match_counts() {
        for pattern in [OverlapPattern::Nested, OverlapPattern::Misaligned] {
            let g = generate_scenario(&SyntheticScenario {
                n_base: 60,
                n_source: 7,
                n_dest: 12,
                pattern,
                ..SyntheticScenario::default()
            })
            .unwrap();
            let total: f64 = g.y_b.iter().sum();
            assert_eq!(g.y_s.total(), total);
            assert_eq!(g.y_d.total(), total);
            assert_eq!(g.records.len() as f64, total);
            assert!(g.records.iter().all(|r| r.position >= r.base as f64 && r.position < r.base as f64 + 1.0));
        }
    }

    #[test]
    fn null_weights_give_unit_rates() {
        let s = SyntheticScenario {
            n_base: 400,
            n_source: 20,
            n_dest: 40,
            intercept: 0.0,
            weights: vec![0.0, 0.0],
            ..SyntheticScenario::default()
        };
        let mut total = 0.0;
        for seed in 0..25 {
            total += generate_scenario(&SyntheticScenario { seed, ..s.clone() }).unwrap().y_s.total();
        }
        // mean 400 per run, sd 20 per run: 25 runs give sd 4 on the average
        assert!((total / 25.0 - 400.0).abs() < 16.0);
    }

    #[test]
    fn nested_and_misaligned_geometry() {
        let nested = SyntheticScenario {
            n_base: 12,
            n_source: 3,
            n_dest: 6,
            pattern: OverlapPattern::Nested,
            ..SyntheticScenario::default()
        };
        let (s, d) = geometry(&nested).unwrap();
        assert_eq!(d, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        assert_eq!(s, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        let (s, d) = geometry(&SyntheticScenario {
            pattern: OverlapPattern::Misaligned,
            ..nested.clone()
        })
        .unwrap();
        assert_eq!(s, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2]);
        assert_eq!(d, vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5]);
        let identity = SyntheticScenario {
            n_base: 6,
            n_source: 6,
            n_dest: 3,
            ..nested
        };
        assert_eq!(geometry(&identity).unwrap().0, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn infeasible_scenarios_rejected() {
        let bad = [
            SyntheticScenario {
                n_source: 2000,
                ..SyntheticScenario::default()
            },
            SyntheticScenario {
                n_dest: 1,
                ..SyntheticScenario::default()
            },
            SyntheticScenario {
                weights: vec![1.0],
                ..SyntheticScenario::default()
            },
            SyntheticScenario {
                n_dest: 1000,
                n_source: 1000,
                ..SyntheticScenario::default()
            },
        ];
        for s in bad {
            assert!(generate_scenario(&s).is_err(), "{s:?}");
        }
    }
}
