//! Aggregation matrices and the counts they act on.
//!
//! An aggregation matrix has one unit entry per column: base region `j`
//! contributes to exactly one group. We therefore store it as the column
//! to row map (`group_of[j]`), which is the sparse compressed-column layout
//! with a single stored entry per column. Group memberships are cached in
//! row-major order so that per-group operations stay linear in `n_base`.

mod nullspace;

pub use nullspace::{null_space, parameterize, particular_solution, NullSpaceBasis, NullSpaceFrame};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, ReaggError, Result};

/// A real vector of per-region values with aligned region identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountVector {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl CountVector {
    pub fn new(ids: Vec<String>, values: Vec<f64>) -> Result<Self> {
        check_len("count vector ids", values.len(), ids.len())?;
        Ok(Self { ids, values })
    }

    /// Values labelled by their position (`"0"`, `"1"`, ...).
    pub fn unlabelled(values: Vec<f64>) -> Self {
        let ids = (0..values.len()).map(|i| i.to_string()).collect();
        Self { ids, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Rejects negative or non-finite entries (count-typed data).
    pub fn check_counts(&self) -> Result<()> {
        for (id, &v) in self.ids.iter().zip(&self.values) {
            if !v.is_finite() || v < 0.0 {
                return Err(ReaggError::InvalidInput(format!(
                    "region `{id}` has invalid count {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Sparse unit-entry matrix mapping base counts to group counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    group_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    group_ids: Vec<String>,
    base_ids: Vec<String>,
}

impl AggregationMatrix {
    /// Builds the matrix with entry `(assignment[j], j) = 1`.
    ///
    /// Every group must receive at least one base region.
    pub fn from_assignment(assignment: &[usize], n_groups: usize) -> Result<Self> {
        let mut members = vec![Vec::new(); n_groups];
        for (base, &group) in assignment.iter().enumerate() {
            if group >= n_groups {
                return Err(ReaggError::GroupOutOfRange {
                    base,
                    group,
                    n_groups,
                });
            }
            members[group].push(base);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(ReaggError::EmptyGroup {
                group: empty.to_string(),
            });
        }
        Ok(Self {
            group_of: assignment.to_vec(),
            members,
            group_ids: (0..n_groups).map(|i| i.to_string()).collect(),
            base_ids: (0..assignment.len()).map(|i| i.to_string()).collect(),
        })
    }

    /// Builds from labelled `(base_id, group_id)` pairs.
    ///
    /// Base order follows `base_ids`; group order is `group_ids` when given,
    /// otherwise first appearance in `pairs`.
    pub fn from_labels(
        base_ids: &[String],
        pairs: &[(String, String)],
        group_ids: Option<&[String]>,
    ) -> Result<Self> {
        use std::collections::HashMap;

        let base_index: HashMap<&str, usize> = base_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut groups: Vec<String> = group_ids.map(<[String]>::to_vec).unwrap_or_default();
        let mut group_index: HashMap<String, usize> = groups
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let fixed_groups = group_ids.is_some();

        let entries = {
            let mut entries = Vec::with_capacity(pairs.len());
            for (base, group) in pairs {
                let col = *base_index.get(base.as_str()).ok_or_else(|| {
                    ReaggError::InvalidInput(format!("unknown base region `{base}`"))
                })?;
                let row = match group_index.get(group) {
                    Some(&row) => row,
                    None if fixed_groups => {
                        return Err(ReaggError::InvalidInput(format!("unknown group `{group}`")))
                    }
                    None => {
                        groups.push(group.clone());
                        group_index.insert(group.clone(), groups.len() - 1);
                        groups.len() - 1
                    }
                };
                entries.push((row, col));
            }
            entries
        };

        let report = validate_allocation(groups.len(), base_ids.len(), &entries);
        if let Some(&col) = report.incomplete_columns.first() {
            return Err(ReaggError::InvalidInput(format!(
                "incomplete allocation: base region `{}` is not assigned to any group",
                base_ids[col]
            )));
        }
        if let Some(&col) = report.non_unit_columns.first() {
            return Err(ReaggError::InvalidInput(format!(
                "non-unit allocation: base region `{}` is assigned to more than one group",
                base_ids[col]
            )));
        }
        if let Some(&row) = report.empty_rows.first() {
            return Err(ReaggError::EmptyGroup {
                group: groups[row].clone(),
            });
        }

        let mut assignment = vec![0; base_ids.len()];
        for &(row, col) in &entries {
            assignment[col] = row;
        }
        let mut matrix = Self::from_assignment(&assignment, groups.len())?;
        matrix.group_ids = groups;
        matrix.base_ids = base_ids.to_vec();
        Ok(matrix)
    }

    pub fn with_group_ids(mut self, ids: Vec<String>) -> Result<Self> {
        check_len("group ids", self.n_groups(), ids.len())?;
        self.group_ids = ids;
        Ok(self)
    }

    pub fn with_base_ids(mut self, ids: Vec<String>) -> Result<Self> {
        check_len("base ids", self.n_base(), ids.len())?;
        self.base_ids = ids;
        Ok(self)
    }

    pub fn n_groups(&self) -> usize {
        self.members.len()
    }

    pub fn n_base(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_of(&self, base: usize) -> usize {
        self.group_of[base]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.group_of
    }

    /// Base regions belonging to `group`, in increasing base order.
    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    pub fn groups(&self) -> impl Iterator<Item = &[usize]> {
        self.members.iter().map(Vec::as_slice)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn base_ids(&self) -> &[String] {
        &self.base_ids
    }

    /// `A y`.
    pub fn aggregate(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("aggregate", self.n_base(), y.len())?;
        let mut out = vec![0.0; self.n_groups()];
        for (&g, &v) in self.group_of.iter().zip(y) {
            out[g] += v;
        }
        Ok(out)
    }

    /// `A y` with the result labelled by group id.
    pub fn aggregate_counts(&self, y: &CountVector) -> Result<CountVector> {
        let values = self.aggregate(&y.values)?;
        CountVector::new(self.group_ids.clone(), values)
    }

    /// `Aᵀ z`: broadcasts each group value onto its base regions.
    pub fn broadcast(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("broadcast", self.n_groups(), z.len())?;
        Ok(self.group_of.iter().map(|&g| z[g]).collect())
    }

    /// `A M` for a dense matrix with `n_base` rows.
    pub fn aggregate_rows(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("aggregate rows", self.n_base(), m.nrows())?;
        let mut out = DMatrix::zeros(self.n_groups(), m.ncols());
        for (base, &g) in self.group_of.iter().enumerate() {
            for c in 0..m.ncols() {
                out[(g, c)] += m[(base, c)];
            }
        }
        Ok(out)
    }

    /// `A Σ Aᵀ` for a square `n_base × n_base` matrix.
    pub fn sandwich(&self, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("sandwich", self.n_base(), cov.ncols())?;
        let left = self.aggregate_rows(cov)?;
        Ok(self.aggregate_rows(&left.transpose())?.transpose())
    }

    /// Dense copy, for tests and small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_groups(), self.n_base());
        for (base, &g) in self.group_of.iter().enumerate() {
            m[(g, base)] = 1.0;
        }
        m
    }

    /// The identity aggregation on `n` base regions.
    pub fn identity(n: usize) -> Self {
        let assignment: Vec<usize> = (0..n).collect();
        Self::from_assignment(&assignment, n).expect("identity is a valid allocation")
    }

    /// True when both matrices group the base regions identically.
    pub fn same_partition(&self, other: &AggregationMatrix) -> bool {
        self.n_base() == other.n_base()
            && self.n_groups() == other.n_groups()
            && self.group_of == other.group_of
    }
}

/// Building an aggregation matrix from an assignment vector.
pub fn build_aggregation_matrix(assignment: &[usize], n_groups: usize) -> Result<AggregationMatrix> {
    AggregationMatrix::from_assignment(assignment, n_groups)
}

/// Outcome of checking a sparse 0/1 incidence structure against the
/// complete- and unit-allocation rules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AllocationReport {
    /// Base regions (columns) with no entry.
    pub incomplete_columns: Vec<usize>,
    /// Base regions with two or more entries.
    pub non_unit_columns: Vec<usize>,
    /// Groups (rows) with no base region.
    pub empty_rows: Vec<usize>,
}

impl AllocationReport {
    pub fn is_valid(&self) -> bool {
        self.incomplete_columns.is_empty()
            && self.non_unit_columns.is_empty()
            && self.empty_rows.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.incomplete_columns {
            out.push(format!("incomplete allocation: column {c} has no entry"));
        }
        for c in &self.non_unit_columns {
            out.push(format!("non-unit allocation: column {c} has more than one entry"));
        }
        for r in &self.empty_rows {
            out.push(format!("empty group: row {r} has no entry"));
        }
        out
    }
}

/// Checks `(row, col)` unit entries of an `n_groups × n_base` matrix.
/// Duplicate `(row, col)` pairs count as separate entries.
pub fn validate_allocation(n_groups: usize, n_base: usize, entries: &[(usize, usize)]) -> AllocationReport {
    let mut per_col = vec![0usize; n_base];
    let mut per_row = vec![0usize; n_groups];
    for &(row, col) in entries {
        if col < n_base {
            per_col[col] += 1;
        }
        if row < n_groups {
            per_row[row] += 1;
        }
    }
    AllocationReport {
        incomplete_columns: (0..n_base).filter(|&c| per_col[c] == 0).collect(),
        non_unit_columns: (0..n_base).filter(|&c| per_col[c] > 1).collect(),
        empty_rows: (0..n_groups).filter(|&r| per_row[r] == 0).collect(),
    }
}

/// Checks a dense matrix: every stored nonzero must be exactly 1.
pub fn validate_dense_allocation(m: &DMatrix<f64>) -> (AllocationReport, Vec<(usize, usize)>) {
    let mut entries = Vec::new();
    let mut non_unit_values = Vec::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 {
                entries.push((r, c));
                if v != 1.0 {
                    non_unit_values.push((r, c));
                }
            }
        }
    }
    (validate_allocation(m.nrows(), m.ncols(), &entries), non_unit_values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_from_assignment() {
        let a = build_aggregation_matrix(&[0, 0, 1], 2).unwrap();
        assert_eq!(
            a.to_dense(),
            DMatrix::from_row_slice(2, 3, &[1., 1., 0., 0., 0., 1.])
        );
        let one = build_aggregation_matrix(&[0], 1).unwrap();
        assert_eq!(one.to_dense(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn empty_group_is_rejected() {
        let err = build_aggregation_matrix(&[0, 0], 2).unwrap_err();
        assert!(matches!(err, ReaggError::EmptyGroup { ref group } if group == "1"));
    }

    #[test]
    fn out_of_range_group_is_rejected() {
        assert!(matches!(
            build_aggregation_matrix(&[0, 3], 2),
            Err(ReaggError::GroupOutOfRange { base: 1, group: 3, .. })
        ));
    }

    #[test]
    fn aggregate_examples() {
        let a = build_aggregation_matrix(&[0, 0, 1], 2).unwrap();
        assert_eq!(a.aggregate(&[1., 2., 3.]).unwrap(), vec![3., 3.]);
        let id = AggregationMatrix::identity(3);
        assert_eq!(id.aggregate(&[4., 5., 6.]).unwrap(), vec![4., 5., 6.]);
        let toy = build_aggregation_matrix(&[0, 0], 1).unwrap();
        assert_eq!(toy.aggregate(&[50., 50.]).unwrap(), vec![100.]);
        assert!(matches!(
            a.aggregate(&[1.0]),
            Err(ReaggError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validation_report_flags() {
        let ok = validate_allocation(2, 3, &[(0, 0), (0, 1), (1, 2)]);
        assert!(ok.is_valid());

        let incomplete = validate_allocation(2, 3, &[(0, 0), (1, 2)]);
        assert_eq!(incomplete.incomplete_columns, vec![1]);
        assert!(incomplete.messages()[0].contains("incomplete allocation"));

        let non_unit = validate_allocation(2, 3, &[(0, 0), (0, 1), (1, 1), (1, 2)]);
        assert_eq!(non_unit.non_unit_columns, vec![1]);
        assert!(non_unit.messages()[0].contains("non-unit allocation"));

        let empty = validate_allocation(2, 2, &[(0, 0), (0, 1)]);
        assert_eq!(empty.empty_rows, vec![1]);
    }

    #[test]
    fn dense_validation_flags_non_unit_values() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let (report, bad) = validate_dense_allocation(&m);
        assert!(report.is_valid());
        assert_eq!(bad, vec![(0, 1)]);
    }

    #[test]
    fn labelled_construction() {
        let bases: Vec<String> = ["b1", "b2", "b3"].iter().map(|s| s.to_string()).collect();
        let pairs = vec![
            ("b1".to_string(), "S".to_string()),
            ("b2".to_string(), "T".to_string()),
            ("b3".to_string(), "S".to_string()),
        ];
        let a = AggregationMatrix::from_labels(&bases, &pairs, None).unwrap();
        assert_eq!(a.group_ids(), &["S".to_string(), "T".to_string()]);
        assert_eq!(a.assignment(), &[0, 1, 0]);

        let dup = vec![
            ("b1".to_string(), "S".to_string()),
            ("b1".to_string(), "T".to_string()),
            ("b2".to_string(), "T".to_string()),
            ("b3".to_string(), "S".to_string()),
        ];
        let err = AggregationMatrix::from_labels(&bases, &dup, None).unwrap_err();
        assert!(err.to_string().contains("non-unit"));
    }

    #[test]
    fn sandwich_matches_dense() {
        let a = build_aggregation_matrix(&[1, 0, 1], 2).unwrap();
        let cov = DMatrix::from_row_slice(3, 3, &[2., 1., 0., 1., 3., 0.5, 0., 0.5, 4.]);
        let dense = a.to_dense();
        let expected = &dense * &cov * dense.transpose();
        assert!((a.sandwich(&cov).unwrap() - expected).norm() < 1e-12);
    }
}
