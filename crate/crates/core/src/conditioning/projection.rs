//! Sample-then-project: draw from the unconditioned latent model and map
//! each draw to its nearest point on the solution set, `Ȳ + N Nᵀ (y - Ȳ)`.
//!
//! Fast, but biased relative to true conditioning. Under a sign constraint,
//! negative coordinates are clipped to zero and the draw re-projected (at
//! most 5 rounds). A draw still infeasible after that is moved along the
//! segment from `Ȳ` to the largest feasible point, which keeps it on the
//! solution set; such draws are counted as fallbacks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};

use super::{ConditionedPosterior, ConditioningDiagnostics, Strategy};
use crate::aggregation::NullSpaceFrame;
use crate::error::{check_len, ReaggError, Result};
use crate::model::LatentDistribution;
use crate::stats::robust_cholesky;

const MAX_CLIP_ROUNDS: usize = 5;

enum Sampler {
    Gaussian { mean: Vec<f64>, factor: DMatrix<f64> },
    Poisson(Vec<Poisson<f64>>),
    Binomial(Vec<Binomial>),
}

impl Sampler {
    fn new(latent: &LatentDistribution) -> Result<Self> {
        latent.validate()?;
        Ok(match latent {
            LatentDistribution::Gaussian { mean, cov } => Sampler::Gaussian {
                mean: mean.iter().copied().collect(),
                factor: robust_cholesky(cov)
                    .ok_or_else(|| ReaggError::Numerical("latent covariance is not positive definite".into()))?
                    .l(),
            },
            LatentDistribution::Poisson { rates } => Sampler::Poisson(
                rates
                    .iter()
                    .map(|&r| Poisson::new(r).map_err(|e| ReaggError::Numerical(format!("Poisson rate {r}: {e}"))))
                    .collect::<Result<_>>()?,
            ),
            LatentDistribution::Binomial { population, probs } => Sampler::Binomial(
                population
                    .iter()
                    .zip(probs)
                    .map(|(&n, &p)| {
                        Binomial::new(n as u64, p).map_err(|e| ReaggError::Numerical(format!("Binomial({n}, {p}): {e}")))
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Sampler::Gaussian { mean, factor } => {
                let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
                (0..mean.len())
                    .map(|i| mean[i] + (0..=i).map(|j| factor[(i, j)] * z[j]).sum::<f64>())
                    .collect()
            }
            Sampler::Poisson(ds) => ds.iter().map(|d| d.sample(rng)).collect(),
            Sampler::Binomial(ds) => ds.iter().map(|d| d.sample(rng) as f64).collect(),
        }
    }
}

/// Projects one draw; returns `(point, clipped, fallback)`.
fn project_feasible(frame: &NullSpaceFrame, draw: &[f64], nonnegative: bool) -> Result<(Vec<f64>, bool, bool)> {
    let mut y = frame.project(draw)?;
    if !nonnegative || y.iter().all(|&v| v >= 0.0) {
        return Ok((y, false, false));
    }
    for _ in 0..MAX_CLIP_ROUNDS {
        for v in y.iter_mut() {
            *v = v.max(0.0);
        }
        y = frame.project(&y)?;
        if y.iter().all(|&v| v >= 0.0) {
            return Ok((y, true, false));
        }
    }
    // largest t in [0, 1] with Ȳ + t (y - Ȳ) ≥ 0 (Ȳ itself is feasible)
    let mut t = 1.0f64;
    for (&p, &v) in frame.particular.iter().zip(&y) {
        if v < 0.0 {
            t = t.min(p / (p - v));
        }
    }
    let shrunk = frame
        .particular
        .iter()
        .zip(&y)
        .map(|(&p, &v)| (p + t * (v - p)).max(0.0))
        .collect();
    Ok((shrunk, true, true))
}

/// Draws `n_samples` latent vectors and projects each onto the solution set.
/// Count latents are always kept nonnegative; `nonnegative` adds the
/// constraint for Gaussian latents.
pub fn condition_projection(
    latent: &LatentDistribution,
    frame: &NullSpaceFrame,
    n_samples: usize,
    seed: u64,
    nonnegative: bool,
) -> Result<ConditionedPosterior> {
    if n_samples == 0 {
        return Err(ReaggError::InvalidInput("n_samples must be positive".into()));
    }
    check_len("latent dimension", frame.n_base(), latent.len())?;
    let nonnegative = nonnegative || !matches!(latent, LatentDistribution::Gaussian { .. });
    if nonnegative {
        if let Some(g) = frame.observed.iter().position(|&v| v < 0.0) {
            return Err(ReaggError::InvalidInput(format!(
                "group `{}` has a negative total but latent counts are constrained nonnegative",
                frame.constraint.group_ids()[g]
            )));
        }
    }
    if matches!(latent, LatentDistribution::Poisson { .. }) {
        log::warn!("projection conditioning of a Poisson latent is biased; MCMC is preferred");
    }
    let sampler = Sampler::new(latent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_base = frame.n_base();
    let mut data = Vec::with_capacity(n_samples * n_base);
    let (mut clipped, mut fallbacks) = (0usize, 0usize);
    for _ in 0..n_samples {
        let draw = sampler.draw(&mut rng);
        let (y, was_clipped, fell_back) = project_feasible(frame, &draw, nonnegative)?;
        clipped += usize::from(was_clipped);
        fallbacks += usize::from(fell_back);
        data.extend(y);
    }
    let mut diagnostics = ConditioningDiagnostics::new(Strategy::Projection, frame.n_free());
    diagnostics.clipping_rate = Some(clipped as f64 / n_samples as f64);
    diagnostics.fallback_samples = Some(fallbacks);
    if fallbacks > 0 {
        diagnostics.warn(format!(
            "{fallbacks} projected samples stayed infeasible after {MAX_CLIP_ROUNDS} clip rounds and were shrunk toward the particular solution"
        ));
    }
    ConditionedPosterior::from_samples(frame.clone(), DMatrix::from_row_slice(n_samples, n_base, &data), diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_aggregation_matrix;
    use nalgebra::DVector;

    fn toy_frame() -> NullSpaceFrame {
        NullSpaceFrame::from_values(&build_aggregation_matrix(&[0, 0], 1).unwrap(), &[100.0]).unwrap()
    }

    fn toy_latent() -> LatentDistribution {
        LatentDistribution::Gaussian {
            mean: DVector::from_vec(vec![50.0, 35.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![200.0, 100.0])),
        }
    }

    #[test]
    fn toy_problem_is_biased() {
        let n = 40_000;
        let post = condition_projection(&toy_latent(), &toy_frame(), n, 3, false).unwrap();
        let mean = post.mean();
        // projected draws have variance ¼(200 + 100) along the plane
        let se = (75.0f64 / n as f64).sqrt();
        assert!((mean[0] - 57.5).abs() < 3.0 * se, "{mean:?}");
        assert!((mean[1] - 42.5).abs() < 3.0 * se);
        assert!(post.diagnostics.max_constraint_violation < 1e-12);
    }

    #[test]
    fn on_plane_point_mass_is_unchanged() {
        let latent = LatentDistribution::Gaussian {
            mean: DVector::from_vec(vec![70.0, 30.0]),
            cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1e-30, 1e-30])),
        };
        let post = condition_projection(&latent, &toy_frame(), 10, 0, false).unwrap();
        let s = post.samples().unwrap();
        for row in s.row_iter() {
            assert!((row[0] - 70.0).abs() < 1e-9 && (row[1] - 30.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clipping_keeps_constraint() {
        let frame = NullSpaceFrame::from_values(&build_aggregation_matrix(&[0, 0, 0], 1).unwrap(), &[1.0]).unwrap();
        let latent = LatentDistribution::Gaussian {
            mean: DVector::from_vec(vec![5.0, -5.0, 0.0]),
            cov: DMatrix::identity(3, 3) * 4.0,
        };
        let post = condition_projection(&latent, &frame, 500, 9, true).unwrap();
        let s = post.samples().unwrap();
        assert!(s.iter().all(|&v| v >= 0.0));
        assert!(post.diagnostics.max_constraint_violation < 1e-9);
        assert!(post.diagnostics.clipping_rate.unwrap() > 0.5);
    }

    #[test]
    fn seeded_draws_repeat() {
        let a = condition_projection(&toy_latent(), &toy_frame(), 50, 5, false).unwrap();
        let b = condition_projection(&toy_latent(), &toy_frame(), 50, 5, false).unwrap();
        assert_eq!(a.samples(), b.samples());
    }
}
