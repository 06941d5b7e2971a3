use nalgebra::{DMatrix, DVector};

use super::{ConditionedPosterior, ConditioningDiagnostics, Strategy};
use crate::aggregation::{AggregationMatrix, NullSpaceFrame};
use crate::error::{check_len, ReaggError, Result};
use crate::model::LatentDistribution;
use crate::stats::symmetrize;

/// `N(mean, cov)` conditioned on `A y = y_s`:
/// `mean + Σ Aᵀ (A Σ Aᵀ)⁻¹ (y_s - A mean)` and `Σ - Σ Aᵀ (A Σ Aᵀ)⁻¹ A Σ`.
pub fn condition_gaussian_exact(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    a: &AggregationMatrix,
    y_s: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_len("conditioning mean", a.n_base(), mean.len())?;
    check_len("conditioning covariance", a.n_base(), cov.nrows())?;
    check_len("conditioning covariance", a.n_base(), cov.ncols())?;
    check_len("observations", a.n_groups(), y_s.len())?;
    // A Σ, n_groups × n_base
    let a_cov = a.aggregate_rows(cov)?;
    let mut s = a.aggregate_rows(&a_cov.transpose())?;
    symmetrize(&mut s);
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| ReaggError::Numerical("A Σ Aᵀ is singular; the aggregates have zero prior variance".into()))?;
    let residual = DVector::from_column_slice(y_s) - DVector::from_vec(a.aggregate(mean.as_slice())?);
    let gain_t = chol.solve(&a_cov); // (A Σ Aᵀ)⁻¹ A Σ
    let new_mean = mean + gain_t.transpose() * residual;
    let mut new_cov = cov - a_cov.transpose() * &gain_t;
    symmetrize(&mut new_cov);
    Ok((new_mean, new_cov))
}

/// Exact conditioning of a Gaussian latent, expressed on the frame.
pub fn condition_exact(latent: &LatentDistribution, frame: &NullSpaceFrame) -> Result<ConditionedPosterior> {
    let LatentDistribution::Gaussian { mean, cov } = latent else {
        return Err(ReaggError::InvalidInput(format!(
            "exact conditioning needs a Gaussian latent, got {}",
            latent.kind_name()
        )));
    };
    check_len("latent dimension", frame.n_base(), mean.len())?;
    if frame.n_free() == 0 {
        return ConditionedPosterior::point(frame.clone(), Strategy::Exact);
    }
    let (m, c) = condition_gaussian_exact(mean, cov, &frame.constraint, &frame.observed)?;
    let q_mean = DVector::from_vec(frame.coordinates(m.as_slice())?);
    // Nᵀ C N, one column of C at a time
    let n_free = frame.n_free();
    let mut ct_n = DMatrix::zeros(n_free, c.ncols());
    for j in 0..c.ncols() {
        let col: Vec<f64> = c.column(j).iter().copied().collect();
        ct_n.set_column(j, &DVector::from_vec(frame.basis.apply_transpose(&col)?));
    }
    let mut q_cov = DMatrix::zeros(n_free, n_free);
    for i in 0..n_free {
        let row: Vec<f64> = ct_n.row(i).iter().copied().collect();
        q_cov.set_row(i, &DVector::from_vec(frame.basis.apply_transpose(&row)?).transpose());
    }
    symmetrize(&mut q_cov);
    ConditionedPosterior::from_gaussian(
        frame.clone(),
        q_mean,
        q_cov,
        ConditioningDiagnostics::new(Strategy::Exact, n_free),
    )
}
