//! Closed-form laws for aggregated latent counts.

use nalgebra::{DMatrix, DVector};

use super::LatentDistribution;
use crate::aggregation::AggregationMatrix;
use crate::error::{check_len, ReaggError, Result};
use crate::stats::{chol_log_det, ln_gamma, robust_cholesky, LN_2PI};

/// `Y ~ N(M, Σ)` ⇒ `A Y ~ N(A M, A Σ Aᵀ)`.
pub fn aggregate_gaussian(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &AggregationMatrix,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_len("gaussian covariance", mean.len(), cov.nrows())?;
    let m = DVector::from_vec(a.aggregate(mean.as_slice())?);
    let mut c = a.sandwich(cov)?;
    crate::stats::symmetrize(&mut c);
    Ok((m, c))
}

/// Independent `Y_i ~ Poisson(r_i)` ⇒ `A Y ~ Poisson(A r)`.
pub fn aggregate_poisson(rates: &[f64], a: &AggregationMatrix) -> Result<Vec<f64>> {
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0)) {
        return Err(ReaggError::InvalidInput(format!("Poisson rate {r} is not positive")));
    }
    a.aggregate(rates)
}

/// Per-group binomial parameters matched to the exact aggregate mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BinomialApprox {
    pub trials: Vec<f64>,
    pub probs: Vec<f64>,
}

impl BinomialApprox {
    pub fn mean(&self) -> Vec<f64> {
        self.trials.iter().zip(&self.probs).map(|(n, p)| n * p).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.trials
            .iter()
            .zip(&self.probs)
            .map(|(n, p)| n * p * (1.0 - p))
            .collect()
    }
}

/// `Σ Binomial(N_i, p_i) ≈ Binomial(Σ N_i, Σ N_i p_i / Σ N_i)` per group.
///
/// The mean is exact. The variance `N p̄(1 - p̄)` is never smaller than the
/// exact `Σ N_i p_i (1 - p_i)` (concavity of `p(1 - p)`), with equality when
/// the group's probabilities coincide.
pub fn aggregate_binomial_approx(
    population: &[f64],
    probs: &[f64],
    a: &AggregationMatrix,
) -> Result<BinomialApprox> {
    check_len("binomial probabilities", population.len(), probs.len())?;
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ReaggError::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    if let Some(n) = population.iter().find(|n| !(**n >= 0.0) || n.fract() != 0.0) {
        return Err(ReaggError::InvalidInput(format!("population {n} is not a nonnegative integer")));
    }
    let trials = a.aggregate(population)?;
    let expected: Vec<f64> = population.iter().zip(probs).map(|(n, p)| n * p).collect();
    let successes = a.aggregate(&expected)?;
    let mut out = Vec::with_capacity(trials.len());
    for (g, (&n, &s)) in trials.iter().zip(&successes).enumerate() {
        if n <= 0.0 {
            return Err(ReaggError::ZeroPopulation {
                region: a.group_ids()[g].clone(),
            });
        }
        out.push((s / n).clamp(0.0, 1.0));
    }
    Ok(BinomialApprox { trials, probs: out })
}

fn check_count_observation(y: &[f64]) -> Result<()> {
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0) || v.fract() != 0.0) {
        return Err(ReaggError::InvalidInput(format!(
            "count observation {v} is not a nonnegative integer"
        )));
    }
    Ok(())
}

fn binomial_log_pmf(k: f64, n: f64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let log_choose = ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0);
    let success = if k > 0.0 { k * p.ln() } else { 0.0 };
    let failure = if n - k > 0.0 { (n - k) * (1.0 - p).ln() } else { 0.0 };
    log_choose + success + failure
}

/// `log P(A Y_b = y_s)` under the closed-form aggregate of `latent`.
pub fn log_likelihood(latent: &LatentDistribution, a: &AggregationMatrix, y_s: &[f64]) -> Result<f64> {
    check_len("observations", a.n_groups(), y_s.len())?;
    check_len("latent dimension", a.n_base(), latent.len())?;
    if y_s.is_empty() {
        return Ok(0.0);
    }
    match latent {
        LatentDistribution::Gaussian { mean, cov } => {
            let (m, c) = aggregate_gaussian(mean, cov, a)?;
            let chol = robust_cholesky(&c)
                .ok_or_else(|| ReaggError::Numerical("aggregated covariance is not positive definite".into()))?;
            let r = DVector::from_column_slice(y_s) - m;
            let quad = r.dot(&chol.solve(&r));
            Ok(-0.5 * (quad + chol_log_det(&chol) + y_s.len() as f64 * LN_2PI))
        }
        LatentDistribution::Poisson { rates } => {
            check_count_observation(y_s)?;
            let mu = aggregate_poisson(rates, a)?;
            Ok(y_s
                .iter()
                .zip(&mu)
                .map(|(&y, &m)| y * m.ln() - m - ln_gamma(y + 1.0))
                .sum())
        }
        LatentDistribution::Binomial { population, probs } => {
            check_count_observation(y_s)?;
            let approx = aggregate_binomial_approx(population, probs, a)?;
            Ok(y_s
                .iter()
                .zip(approx.trials.iter().zip(&approx.probs))
                .map(|(&y, (&n, &p))| binomial_log_pmf(y, n, p))
                .sum())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_aggregation_matrix;

    fn pair() -> AggregationMatrix {
        build_aggregation_matrix(&[0, 0], 1).unwrap()
    }

    #[test]
    fn gaussian_examples() {
        let (m, c) = aggregate_gaussian(&DVector::zeros(2), &DMatrix::identity(2, 2), &pair()).unwrap();
        assert_eq!(m[0], 0.0);
        assert_eq!(c[(0, 0)], 2.0);

        let mean = DVector::from_vec(vec![50.0, 35.0]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![200.0, 100.0]));
        let (m, c) = aggregate_gaussian(&mean, &cov, &pair()).unwrap();
        assert_eq!((m[0], c[(0, 0)]), (85.0, 300.0));

        let id = AggregationMatrix::identity(2);
        let (m2, c2) = aggregate_gaussian(&mean, &cov, &id).unwrap();
        assert_eq!((m2, c2), (mean, cov));
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(aggregate_poisson(&[2., 3.], &pair()).unwrap(), vec![5.]);
        assert_eq!(
            aggregate_poisson(&[2., 3.], &AggregationMatrix::identity(2)).unwrap(),
            vec![2., 3.]
        );
        let a = build_aggregation_matrix(&[0, 0, 1], 2).unwrap();
        assert_eq!(aggregate_poisson(&[1., 1., 1.], &a).unwrap(), vec![2., 1.]);
        assert!(aggregate_poisson(&[0., 1.], &pair()).is_err());
    }

    #[test]
    fn binomial_examples() {
        let b = aggregate_binomial_approx(&[10., 10.], &[0.2, 0.8], &pair()).unwrap();
        assert_eq!(b.trials, vec![20.]);
        assert!((b.probs[0] - 0.5).abs() < 1e-15);
        assert!((b.variance()[0] - 5.0).abs() < 1e-12);

        let single = aggregate_binomial_approx(&[7.], &[0.3], &AggregationMatrix::identity(1)).unwrap();
        assert_eq!((single.trials[0], single.probs[0]), (7.0, 0.3));

        let equal = aggregate_binomial_approx(&[4., 6.], &[0.25, 0.25], &pair()).unwrap();
        assert_eq!((equal.trials[0], equal.probs[0]), (10.0, 0.25));
    }

    #[test]
    fn log_likelihood_examples() {
        let pois = LatentDistribution::Poisson { rates: vec![2., 3.] };
        let ll = log_likelihood(&pois, &pair(), &[5.]).unwrap();
        let direct = 5.0 * 5f64.ln() - 5.0 - 120f64.ln();
        assert!((ll - direct).abs() < 1e-12);
        assert!((ll + 1.7403).abs() < 1e-4);

        let gauss = LatentDistribution::Gaussian {
            mean: DVector::from_vec(vec![50., 35.]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![200., 100.])),
        };
        let ll = log_likelihood(&gauss, &pair(), &[85.]).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI * 300.0).ln()).abs() < 1e-12);
        assert!((ll + 3.770830).abs() < 1e-6);

        let empty = build_aggregation_matrix(&[], 0).unwrap();
        let none = LatentDistribution::Poisson { rates: vec![] };
        assert_eq!(log_likelihood(&none, &empty, &[]).unwrap(), 0.0);

        assert!(log_likelihood(&pois, &pair(), &[-1.]).is_err());
    }

    #[test]
    fn binomial_log_likelihood_matches_pmf() {
        let lat = LatentDistribution::Binomial {
            population: vec![3., 1.],
            probs: vec![0.5, 0.5],
        };
        // Binomial(4, 0.5) at 2 = 6/16
        let ll = log_likelihood(&lat, &pair(), &[2.]).unwrap();
        assert!((ll - (6.0f64 / 16.0).ln()).abs() < 1e-12);
    }
}
