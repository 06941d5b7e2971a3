//! Metropolis-within-Gibbs on the frame coordinates `V_f`.
//!
//! Separable targets (Poisson, binomial, diagonal Gaussian) are updated one
//! source group at a time: a group's frame block only moves that group's
//! base regions, so each update costs O(group size). A Gaussian with dense
//! covariance is updated as one block with proposals shaped by its frame
//! precision. Proposals leaving the support (or `Y_b ≥ 0` when requested)
//! are rejected. Scales adapt by Robbins–Monro during burn-in only.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::target::{FrameGaussian, Separable, Target};
use super::{ConditionedPosterior, ConditioningDiagnostics, McmcConfig, ProposalScale, Strategy};
use crate::aggregation::NullSpaceFrame;
use crate::error::{check_len, ReaggError, Result};
use crate::model::LatentDistribution;

fn target_acceptance(dim: usize) -> f64 {
    match dim {
        1 => 0.44,
        2..=4 => 0.3,
        _ => 0.234,
    }
}

struct Block {
    index: usize,
    dim: usize,
    log_scale: f64,
    target: f64,
    log_density: f64,
    adapt_steps: u64,
}

struct ChainOutput {
    /// Row-major `n × n_base`.
    samples: Vec<f64>,
    accepted: u64,
    attempted: u64,
}

/// Feasible starting point: each group's total spread in proportion to the
/// latent mean (population for binomial latents), or the projected mean when
/// no sign constraint applies.
fn initial_point(latent: &LatentDistribution, frame: &NullSpaceFrame, nonnegative: bool) -> Result<Vec<f64>> {
    if !nonnegative {
        return frame.project(&latent.mean());
    }
    let weights: Vec<f64> = match latent {
        LatentDistribution::Binomial { population, .. } => population.clone(),
        other => other.mean().iter().map(|m| m.max(0.0)).collect(),
    };
    let a = &frame.constraint;
    let mut y = vec![0.0; frame.n_base()];
    for (g, members) in a.groups().enumerate() {
        let total = frame.observed[g];
        if total < 0.0 {
            return Err(ReaggError::InvalidInput(format!(
                "group `{}` has negative total {total} but latent counts are constrained nonnegative",
                a.group_ids()[g]
            )));
        }
        let w: f64 = members.iter().map(|&m| weights[m]).sum();
        for &m in members {
            y[m] = if w > 0.0 {
                total * weights[m] / w
            } else {
                total / members.len() as f64
            };
        }
    }
    Ok(y)
}

struct Chain<'a> {
    frame: &'a NullSpaceFrame,
    target: &'a Target,
    nonnegative: bool,
    cfg: &'a McmcConfig,
    start_v: &'a [f64],
    start_y: &'a [f64],
}

impl Chain<'_> {
    fn run(&self, seed: u64, n_keep: usize) -> ChainOutput {
        match self.target {
            Target::Separable(t) => self.run_blockwise(t, seed, n_keep),
            Target::Joint(t) => self.run_joint(t, seed, n_keep),
        }
    }

    fn adapt(&self, block: &mut Block, accepted: bool) {
        if matches!(self.cfg.proposal_scale, ProposalScale::Auto) {
            block.adapt_steps += 1;
            let gain = (block.adapt_steps as f64).powf(-0.6);
            block.log_scale += gain * (f64::from(u8::from(accepted)) - block.target);
        }
    }

    fn initial_log_scale(&self, spread: f64, dim: usize) -> f64 {
        match self.cfg.proposal_scale {
            ProposalScale::Fixed(s) => s.ln(),
            ProposalScale::Auto => (2.38 / (dim as f64).sqrt() * spread).max(1e-12).ln(),
        }
    }

    fn run_blockwise(&self, target: &Separable, seed: u64, n_keep: usize) -> ChainOutput {
        let basis = &self.frame.basis;
        let particular = &self.frame.particular;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = self.start_v.to_vec();
        let mut y = self.start_y.to_vec();

        let mut blocks: Vec<Block> = (0..basis.n_blocks())
            .filter_map(|b| {
                let dim = basis.block_range(b).len();
                let pinned = self.nonnegative && self.frame.observed[b] == 0.0;
                if dim == 0 || pinned {
                    return None;
                }
                let members = basis.block_members(b);
                let spread = members.iter().map(|&m| target.spread(m)).sum::<f64>() / members.len() as f64;
                let log_density = members
                    .iter()
                    .map(|&m| target.log_density(m, y[m], self.nonnegative))
                    .sum();
                Some(Block {
                    index: b,
                    dim,
                    log_scale: self.initial_log_scale(spread, dim),
                    target: target_acceptance(dim),
                    log_density,
                    adapt_steps: 0,
                })
            })
            .collect();

        let n_base = y.len();
        let mut samples = Vec::with_capacity(n_keep * n_base);
        let (mut accepted, mut attempted) = (0u64, 0u64);
        let total = self.cfg.burn_in + n_keep * self.cfg.thinning;
        let mut proposal = Vec::new();
        let mut moved = Vec::new();
        for iter in 0..total {
            let burning = iter < self.cfg.burn_in;
            for block in blocks.iter_mut() {
                let range = basis.block_range(block.index);
                let members = basis.block_members(block.index);
                let scale = block.log_scale.exp();
                proposal.clear();
                proposal.extend(v[range.clone()].iter().map(|&x| x + scale * rng.sample::<f64, _>(StandardNormal)));
                moved.clear();
                moved.extend(
                    basis
                        .apply_block(block.index, &proposal)
                        .into_iter()
                        .zip(members)
                        .map(|(dy, &m)| particular[m] + dy),
                );
                let new_density: f64 = members
                    .iter()
                    .zip(&moved)
                    .map(|(&m, &ym)| target.log_density(m, ym, self.nonnegative))
                    .sum();
                let accept = rng.random::<f64>().ln() < new_density - block.log_density;
                if accept {
                    v[range].copy_from_slice(&proposal);
                    for (&m, &ym) in members.iter().zip(&moved) {
                        y[m] = ym;
                    }
                    block.log_density = new_density;
                }
                if burning {
                    self.adapt(block, accept);
                } else {
                    attempted += 1;
                    accepted += u64::from(accept);
                }
            }
            if !burning && (iter + 1 - self.cfg.burn_in) % self.cfg.thinning == 0 {
                samples.extend_from_slice(&y);
            }
        }
        ChainOutput {
            samples,
            accepted,
            attempted,
        }
    }

    fn run_joint(&self, target: &FrameGaussian, seed: u64, n_keep: usize) -> ChainOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_free = self.start_v.len();
        // proposals N(0, s² P⁻¹): δ = s L⁻ᵀ z with P = L Lᵀ
        let l_t = crate::stats::robust_cholesky(&target.precision)
            .map(|c| c.l().transpose())
            .unwrap_or_else(|| DMatrix::identity(n_free, n_free));
        let mut v = DVector::from_column_slice(self.start_v);
        let mut y = self.start_y.to_vec();
        let mut block = Block {
            index: 0,
            dim: n_free,
            log_scale: self.initial_log_scale(1.0, n_free),
            target: target_acceptance(n_free),
            log_density: target.log_density(&v),
            adapt_steps: 0,
        };
        if self.nonnegative && y.iter().any(|&x| x < 0.0) {
            block.log_density = f64::NEG_INFINITY;
        }
        let n_base = y.len();
        let mut samples = Vec::with_capacity(n_keep * n_base);
        let (mut accepted, mut attempted) = (0u64, 0u64);
        let total = self.cfg.burn_in + n_keep * self.cfg.thinning;
        for iter in 0..total {
            let burning = iter < self.cfg.burn_in;
            let z = DVector::from_fn(block.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let step = l_t
                .solve_upper_triangular(&z)
                .unwrap_or(z)
                * block.log_scale.exp();
            let proposal = &v + step;
            let mut new_density = target.log_density(&proposal);
            let moved = self
                .frame
                .parameterize(proposal.as_slice())
                .expect("proposal has frame dimension");
            if self.nonnegative && moved.iter().any(|&x| x < 0.0) {
                new_density = f64::NEG_INFINITY;
            }
            let accept = rng.random::<f64>().ln() < new_density - block.log_density;
            if accept {
                v = proposal;
                y = moved;
                block.log_density = new_density;
            }
            if burning {
                self.adapt(&mut block, accept);
            } else {
                attempted += 1;
                accepted += u64::from(accept);
            }
            if !burning && (iter + 1 - self.cfg.burn_in) % self.cfg.thinning == 0 {
                samples.extend_from_slice(&y);
            }
        }
        ChainOutput {
            samples,
            accepted,
            attempted,
        }
    }
}

/// Samples the conditioned posterior by Metropolis-within-Gibbs in frame
/// coordinates. Count latents are always constrained to `Y_b ≥ 0`;
/// `nonnegative` adds the constraint for Gaussian latents.
pub fn condition_mcmc(
    latent: &LatentDistribution,
    frame: &NullSpaceFrame,
    cfg: &McmcConfig,
    nonnegative: bool,
) -> Result<ConditionedPosterior> {
    cfg.validate()?;
    check_len("latent dimension", frame.n_base(), latent.len())?;
    if frame.n_free() == 0 {
        return ConditionedPosterior::point(frame.clone(), Strategy::Mcmc);
    }
    let nonnegative = nonnegative || !matches!(latent, LatentDistribution::Gaussian { .. });
    let target = Target::new(latent, frame)?;
    let start = initial_point(latent, frame, nonnegative)?;
    let start_v = frame.coordinates(&start)?;
    let start_y = frame.parameterize(&start_v)?;
    let chain = Chain {
        frame,
        target: &target,
        nonnegative,
        cfg,
        start_v: &start_v,
        start_y: &start_y,
    };

    let per_chain: Vec<usize> = (0..cfg.chains)
        .map(|c| cfg.n_samples / cfg.chains + usize::from(c < cfg.n_samples % cfg.chains))
        .collect();
    let outputs: Vec<ChainOutput> = if cfg.chains == 1 {
        vec![chain.run(cfg.seed, cfg.n_samples)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = per_chain
                .iter()
                .enumerate()
                .map(|(c, &n)| {
                    let chain = &chain;
                    scope.spawn(move || chain.run(cfg.seed.wrapping_add(c as u64), n))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sampler thread panicked"))
                .collect()
        })
    };

    let n_base = frame.n_base();
    let mut data = Vec::with_capacity(cfg.n_samples * n_base);
    let (mut accepted, mut attempted) = (0u64, 0u64);
    for out in outputs {
        data.extend(out.samples);
        accepted += out.accepted;
        attempted += out.attempted;
    }
    if nonnegative {
        for x in data.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
    }
    let samples = DMatrix::from_row_slice(cfg.n_samples, n_base, &data);

    let mut diagnostics = ConditioningDiagnostics::new(Strategy::Mcmc, frame.n_free());
    diagnostics.chains = Some(cfg.chains);
    if attempted > 0 {
        let rate = accepted as f64 / attempted as f64;
        diagnostics.acceptance_rate = Some(rate);
        if !(0.05..=0.95).contains(&rate) {
            diagnostics.warn(format!("MCMC acceptance rate {rate:.3} is outside [0.05, 0.95]"));
        }
    }
    diagnostics.split_mean_discrepancy = Some(split_mean_discrepancy(&samples));
    ConditionedPosterior::from_samples(frame.clone(), samples, diagnostics)
}

/// Largest `|mean(first half) - mean(second half)| / sd` over columns.
fn split_mean_discrepancy(samples: &DMatrix<f64>) -> f64 {
    let n = samples.nrows();
    if n < 4 {
        return 0.0;
    }
    let half = n / 2;
    let mut worst = 0.0f64;
    for col in samples.column_iter() {
        let all = col.iter().copied().collect::<Vec<_>>();
        let sd = crate::stats::sample_variance(&all).sqrt();
        if sd > 0.0 {
            let a = crate::stats::mean(&all[..half]);
            let b = crate::stats::mean(&all[half..]);
            worst = worst.max((a - b).abs() / sd);
        }
    }
    worst
}
