//! Population-weighted correspondences.
//!
//! A correspondence matrix `C` allocates each source count over destination
//! regions in proportion to the weighted population the two regions share:
//! `C = A_db D(x*) A_sbᵀ D(A_sb x*)⁻¹`. Only `(dest, source)` pairs that
//! share a base region are stored.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::aggregation::{AggregationMatrix, CountVector};
use crate::error::{check_len, ReaggError, Result};

/// Nonnegative per-base weighting feature (`x* = X_b W`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFeature {
    pub values: Vec<f64>,
    /// Number of entries clipped from negative to zero.
    pub clipped: usize,
}

/// `X_b W`, clipped at zero.
pub fn weighted_feature(x_b: &DMatrix<f64>, w: &[f64]) -> Result<WeightedFeature> {
    check_len("weighting vector", x_b.ncols(), w.len())?;
    let mut clipped = 0;
    let values = (0..x_b.nrows())
        .map(|i| {
            let v: f64 = (0..x_b.ncols()).map(|j| x_b[(i, j)] * w[j]).sum();
            if v < 0.0 {
                clipped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("weighted feature: clipped {clipped} negative entries to zero");
    }
    Ok(WeightedFeature { values, clipped })
}

/// Sparse `n_dest × n_source` allocation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceMatrix {
    n_dest: usize,
    n_source: usize,
    /// `(source, dest) -> weight`.
    entries: BTreeMap<(usize, usize), f64>,
    source_ids: Vec<String>,
    dest_ids: Vec<String>,
}

impl CorrespondenceMatrix {
    pub fn n_dest(&self) -> usize {
        self.n_dest
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn get(&self, dest: usize, source: usize) -> f64 {
        self.entries.get(&(source, dest)).copied().unwrap_or(0.0)
    }

    /// Nonzero entries as `(source, dest, weight)`, source-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().map(|(&(s, d), &w)| (s, d, w))
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn dest_ids(&self) -> &[String] {
        &self.dest_ids
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_source];
        for (s, _, w) in self.entries() {
            sums[s] += w;
        }
        sums
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_dest, self.n_source);
        for (s, d, w) in self.entries() {
            m[(d, s)] = w;
        }
        m
    }

    /// `C y_s`.
    pub fn apply(&self, y_s: &[f64]) -> Result<Vec<f64>> {
        check_len("apply correspondence", self.n_source, y_s.len())?;
        let mut out = vec![0.0; self.n_dest];
        for (s, d, w) in self.entries() {
            out[d] += w * y_s[s];
        }
        Ok(out)
    }
}

/// Builds the population-weighted correspondence from the two aggregations
/// of a shared base geometry.
pub fn build_correspondence(
    a_db: &AggregationMatrix,
    a_sb: &AggregationMatrix,
    x_star: &WeightedFeature,
) -> Result<CorrespondenceMatrix> {
    check_len("destination/source base count", a_sb.n_base(), a_db.n_base())?;
    check_len("weighted feature", a_sb.n_base(), x_star.values.len())?;
    if let Some(bad) = x_star.values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(ReaggError::InvalidInput(format!(
            "weighted feature entry {bad} is negative or non-finite"
        )));
    }

    // shared population P_ds, keyed (source, dest)
    let mut shared: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (base, &x) in x_star.values.iter().enumerate() {
        if x > 0.0 {
            *shared.entry((a_sb.group_of(base), a_db.group_of(base))).or_default() += x;
        }
    }
    let source_pop = a_sb.aggregate(&x_star.values)?;
    if let Some(s) = source_pop.iter().position(|&p| !(p > 0.0)) {
        return Err(ReaggError::ZeroPopulation {
            region: a_sb.group_ids()[s].clone(),
        });
    }
    for ((s, _), w) in shared.iter_mut() {
        *w /= source_pop[*s];
    }
    Ok(CorrespondenceMatrix {
        n_dest: a_db.n_groups(),
        n_source: a_sb.n_groups(),
        entries: shared,
        source_ids: a_sb.group_ids().to_vec(),
        dest_ids: a_db.group_ids().to_vec(),
    })
}

/// `C y_s`, labelled by destination id.
pub fn apply_correspondence(c: &CorrespondenceMatrix, y_s: &CountVector) -> Result<CountVector> {
    let values = c.apply(&y_s.values)?;
    CountVector::new(c.dest_ids.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_aggregation_matrix;

    fn worked_example() -> CorrespondenceMatrix {
        let a_db = build_aggregation_matrix(&[0, 0, 1], 2).unwrap();
        let a_sb = build_aggregation_matrix(&[0, 1, 1], 2).unwrap();
        let x = WeightedFeature {
            values: vec![10., 20., 30.],
            clipped: 0,
        };
        build_correspondence(&a_db, &a_sb, &x).unwrap()
    }

    #[test]
    fn weighted_feature_examples() {
        let total = DMatrix::from_column_slice(3, 1, &[5., 6., 7.]);
        assert_eq!(weighted_feature(&total, &[1.0]).unwrap().values, vec![5., 6., 7.]);

        let x = DMatrix::from_row_slice(2, 2, &[1., 2., 3., 4.]);
        assert_eq!(weighted_feature(&x, &[0.0, 1.0]).unwrap().values, vec![2., 4.]);
        assert_eq!(weighted_feature(&x, &[1.0, 1.0]).unwrap().values, vec![3., 7.]);

        let neg = weighted_feature(&x, &[1.0, -1.0]).unwrap();
        assert_eq!(neg.values, vec![0., 0.]);
        assert_eq!(neg.clipped, 2);
        assert!(weighted_feature(&x, &[1.0]).is_err());
    }

    #[test]
    fn worked_example_matrix() {
        // P_ds = [[10, 20], [0, 30]], source populations [10, 50]
        let c = worked_example();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.0, 0.6]);
        assert_eq!(c.to_dense(), expected);
        assert_eq!(c.apply(&[5., 100.]).unwrap(), vec![45., 60.]);
        assert_eq!(c.apply(&[0., 0.]).unwrap(), vec![0., 0.]);
    }

    #[test]
    fn identical_geometry_gives_identity() {
        let a = build_aggregation_matrix(&[0, 1, 1, 2], 3).unwrap();
        let x = WeightedFeature {
            values: vec![1., 2., 3., 4.],
            clipped: 0,
        };
        let c = build_correspondence(&a, &a, &x).unwrap();
        assert_eq!(c.to_dense(), DMatrix::identity(3, 3));
    }

    #[test]
    fn symmetric_split() {
        let a_sb = build_aggregation_matrix(&[0, 0], 1).unwrap();
        let a_db = build_aggregation_matrix(&[0, 1], 2).unwrap();
        let x = WeightedFeature {
            values: vec![3., 3.],
            clipped: 0,
        };
        let c = build_correspondence(&a_db, &a_sb, &x).unwrap();
        assert_eq!(c.to_dense(), DMatrix::from_column_slice(2, 1, &[0.5, 0.5]));
    }

    #[test]
    fn zero_population_names_region() {
        let a_sb = build_aggregation_matrix(&[0, 1], 2)
            .unwrap()
            .with_group_ids(vec!["north".into(), "south".into()])
            .unwrap();
        let a_db = build_aggregation_matrix(&[0, 0], 1).unwrap();
        let x = WeightedFeature {
            values: vec![4., 0.],
            clipped: 0,
        };
        let err = build_correspondence(&a_db, &a_sb, &x).unwrap_err();
        assert!(matches!(err, ReaggError::ZeroPopulation { ref region } if region == "south"));
    }
}
