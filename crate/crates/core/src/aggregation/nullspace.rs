//! Null space of a unit-entry aggregation matrix and the affine frame of
//! all latent vectors consistent with an observation.
//!
//! For `A` with one unit entry per column, `ker A` is the direct sum over
//! groups of the vectors that sum to zero inside the group. Each block gets
//! the Helmert basis: for a group with members `m_0 < m_1 < ... < m_{k-1}`,
//! column `j = 1..k` has `c_j = 1/sqrt(j(j+1))` on `m_0..m_{j-1}` and
//! `-j c_j` on `m_j`. The columns are orthonormal and the full basis is the
//! Q factor of an orthogonal decomposition of `Aᵀ` restricted to `ker A`,
//! so `N Nᵀ = I - Aᵀ(AAᵀ)⁻¹A` exactly. `N v` and `Nᵀ x` cost O(n_base)
//! through prefix/suffix sums, and the basis is never materialised unless
//! asked for.

use nalgebra::DMatrix;

use super::{AggregationMatrix, CountVector};
use crate::error::{check_len, ReaggError, Result};

/// Orthonormal basis of `ker A`, stored implicitly per group.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBasis {
    n_base: usize,
    /// Members of each group (increasing base order).
    blocks: Vec<Vec<usize>>,
    /// Offset of each block in the free coordinates.
    offsets: Vec<usize>,
    n_free: usize,
}

#[inline]
fn helmert(j: usize) -> f64 {
    let j = j as f64;
    1.0 / (j * (j + 1.0)).sqrt()
}

impl NullSpaceBasis {
    pub fn n_base(&self) -> usize {
        self.n_base
    }

    /// `n_f`, the number of free coordinates.
    pub fn n_free(&self) -> usize {
        self.n_free
    }

    /// Number of independent blocks (one per group).
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Base regions touched by block `b`.
    pub fn block_members(&self, b: usize) -> &[usize] {
        &self.blocks[b]
    }

    /// Free-coordinate range owned by block `b`.
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let start = self.offsets[b];
        start..start + self.blocks[b].len().saturating_sub(1)
    }

    /// `N v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("null space coordinates", self.n_free, v.len())?;
        let mut out = vec![0.0; self.n_base];
        for b in 0..self.blocks.len() {
            let range = self.block_range(b);
            self.apply_block_into(b, &v[range], &mut out);
        }
        Ok(out)
    }

    /// Writes `N_b v_b` onto the members of block `b` in `out` (overwrites).
    pub fn apply_block_into(&self, b: usize, v_block: &[f64], out: &mut [f64]) {
        for (&m, y) in self.blocks[b].iter().zip(self.apply_block(b, v_block)) {
            out[m] = y;
        }
    }

    /// Block `b` of `N v` as a vector aligned with [`Self::block_members`].
    pub fn apply_block(&self, b: usize, v_block: &[f64]) -> Vec<f64> {
        let members = &self.blocks[b];
        let k = members.len();
        let mut out = vec![0.0; k];
        let mut suffix = 0.0;
        for i in (0..k).rev() {
            let own = if i >= 1 {
                -(i as f64) * helmert(i) * v_block[i - 1]
            } else {
                0.0
            };
            out[i] = suffix + own;
            if i >= 1 {
                suffix += helmert(i) * v_block[i - 1];
            }
        }
        out
    }

    /// `Nᵀ x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("null space transpose", self.n_base, x.len())?;
        let mut out = vec![0.0; self.n_free];
        for (b, members) in self.blocks.iter().enumerate() {
            let offset = self.offsets[b];
            let mut prefix = 0.0;
            for (i, &m) in members.iter().enumerate() {
                if i >= 1 {
                    out[offset + i - 1] = helmert(i) * (prefix - i as f64 * x[m]);
                }
                prefix += x[m];
            }
        }
        Ok(out)
    }

    /// `N Nᵀ x`, the orthogonal projection of `x` onto `ker A`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.apply_transpose(x)?;
        self.apply(&v)
    }

    /// Dense `n_base × n_f` copy.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_base, self.n_free);
        for (b, members) in self.blocks.iter().enumerate() {
            let offset = self.offsets[b];
            for j in 1..members.len() {
                let c = helmert(j);
                for &m_i in &members[..j] {
                    m[(m_i, offset + j - 1)] = c;
                }
                m[(members[j], offset + j - 1)] = -(j as f64) * c;
            }
        }
        m
    }
}

/// Orthonormal basis of the null space of `a`; `n_f = n_base - n_groups`.
pub fn null_space(a: &AggregationMatrix) -> NullSpaceBasis {
    let blocks: Vec<Vec<usize>> = a.groups().map(<[usize]>::to_vec).collect();
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut n_free = 0;
    for block in &blocks {
        offsets.push(n_free);
        n_free += block.len().saturating_sub(1);
    }
    NullSpaceBasis {
        n_base: a.n_base(),
        blocks,
        offsets,
        n_free,
    }
}

/// Minimum-norm solution `Aᵀ(AAᵀ)⁻¹ y_s`.
///
/// `AAᵀ` is diagonal with the group sizes on the diagonal, so each group
/// count is spread uniformly over the group's base regions.
pub fn particular_solution(a: &AggregationMatrix, y_s: &[f64]) -> Result<Vec<f64>> {
    check_len("particular solution", a.n_groups(), y_s.len())?;
    let mut out = vec![0.0; a.n_base()];
    for (g, members) in a.groups().enumerate() {
        if members.is_empty() {
            return Err(ReaggError::EmptyGroup {
                group: a.group_ids()[g].clone(),
            });
        }
        let share = y_s[g] / members.len() as f64;
        for &m in members {
            out[m] = share;
        }
    }
    Ok(out)
}

/// The affine set `{ Ȳ + N v }` of all latent vectors with `A y = Y_s`.
#[derive(Debug, Clone)]
pub struct NullSpaceFrame {
    pub particular: Vec<f64>,
    pub basis: NullSpaceBasis,
    pub constraint: AggregationMatrix,
    pub observed: Vec<f64>,
}

impl NullSpaceFrame {
    pub fn new(a: &AggregationMatrix, y_s: &CountVector) -> Result<Self> {
        Self::from_values(a, &y_s.values)
    }

    pub fn from_values(a: &AggregationMatrix, y_s: &[f64]) -> Result<Self> {
        Ok(Self {
            particular: particular_solution(a, y_s)?,
            basis: null_space(a),
            constraint: a.clone(),
            observed: y_s.to_vec(),
        })
    }

    pub fn n_base(&self) -> usize {
        self.basis.n_base()
    }

    pub fn n_free(&self) -> usize {
        self.basis.n_free()
    }

    /// `Ȳ + N v`.
    pub fn parameterize(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.basis.apply(v)?;
        for (yi, p) in y.iter_mut().zip(&self.particular) {
            *yi += p;
        }
        Ok(y)
    }

    /// Frame coordinates of a point, `Nᵀ (y - Ȳ)`.
    pub fn coordinates(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("frame coordinates", self.n_base(), y.len())?;
        let shifted: Vec<f64> = y.iter().zip(&self.particular).map(|(a, b)| a - b).collect();
        self.basis.apply_transpose(&shifted)
    }

    /// Orthogonal projection onto the solution set: `Ȳ + N Nᵀ (y - Ȳ)`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        let v = self.coordinates(y)?;
        self.parameterize(&v)
    }

    /// Largest relative violation `|A y - Y_s| / max(1, |Y_s|)` over groups.
    pub fn constraint_violation(&self, y: &[f64]) -> Result<f64> {
        let ay = self.constraint.aggregate(y)?;
        Ok(ay
            .iter()
            .zip(&self.observed)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max))
    }
}

/// `Ȳ + N v` for a frame.
pub fn parameterize(frame: &NullSpaceFrame, v: &[f64]) -> Result<Vec<f64>> {
    frame.parameterize(v)
}
