//! Planar polygon geometry used to derive base geometries and to synthesise
//! base-level populations from point records.
//!
//! Coordinates are assumed pre-projected onto a plane. Polygons have a
//! single exterior ring without holes; multi-part regions are several
//! polygons sharing an id.

mod grid;
mod hierarchy;

pub use grid::{clip_to_rect, grid_base_geometry, GridIntersection, GridSpec, IntersectionTable};
pub use hierarchy::{common_ancestor_base, HierarchyTree};

use serde::{Deserialize, Serialize};

use crate::aggregation::CountVector;
use crate::error::{ReaggError, Result};

pub type Point = [f64; 2];

/// A simple polygon given by its exterior ring (implicitly closed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub id: String,
    #[serde(rename = "ring")]
    pub exterior: Vec<Point>,
}

/// Twice the signed area of a closed ring (positive when counter-clockwise).
pub fn ring_signed_area2(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = ring[i];
        let [x1, y1] = ring[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc
}

/// Shoelace area of a ring (absolute value).
pub fn ring_area(ring: &[Point]) -> f64 {
    ring_signed_area2(ring).abs() / 2.0
}

impl Polygon {
    /// Validates vertex count and nonzero area. A repeated closing vertex
    /// is dropped.
    pub fn new(id: impl Into<String>, mut exterior: Vec<Point>) -> Result<Self> {
        let id = id.into();
        if exterior.len() > 1 && exterior.first() == exterior.last() {
            exterior.pop();
        }
        if exterior.len() < 3 {
            return Err(ReaggError::DegeneratePolygon {
                id,
                reason: format!("{} vertices, need at least 3", exterior.len()),
            });
        }
        if exterior.iter().flatten().any(|c| !c.is_finite()) {
            return Err(ReaggError::DegeneratePolygon {
                id,
                reason: "non-finite coordinate".into(),
            });
        }
        let poly = Self { id, exterior };
        poly.check_area()?;
        Ok(poly)
    }

    fn check_area(&self) -> Result<()> {
        let area = self.area();
        let (min, max) = self.bounds();
        let scale = ((max[0] - min[0]) * (max[1] - min[1])).max(f64::MIN_POSITIVE);
        if !(area > 1e-14 * scale) {
            return Err(ReaggError::DegeneratePolygon {
                id: self.id.clone(),
                reason: "zero signed area".into(),
            });
        }
        Ok(())
    }

    /// Full validation: vertex count, area, and no self-intersection.
    pub fn validate(&self) -> Result<()> {
        if self.exterior.len() < 3 {
            return Err(ReaggError::DegeneratePolygon {
                id: self.id.clone(),
                reason: "fewer than 3 vertices".into(),
            });
        }
        self.check_area()?;
        if !self.is_simple() {
            return Err(ReaggError::DegeneratePolygon {
                id: self.id.clone(),
                reason: "ring self-intersects".into(),
            });
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        ring_area(&self.exterior)
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in &self.exterior {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        (min, max)
    }

    /// O(n²) check that no two non-adjacent edges touch.
    pub fn is_simple(&self) -> bool {
        let n = self.exterior.len();
        let edge = |i: usize| (self.exterior[i], self.exterior[(i + 1) % n]);
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = edge(i);
                let (c, d) = edge(j);
                if adjacent {
                    // adjacent edges may only share their common vertex
                    if n > 3 && collinear_overlap(a, b, c, d) {
                        return false;
                    }
                    continue;
                }
                if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Boundary-inclusive containment test.
    pub fn contains(&self, p: Point) -> bool {
        let ring = &self.exterior;
        let n = ring.len();
        let mut inside = false;
        for i in 0..n {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            if on_segment(p, a, b) {
                return true;
            }
            // crossing number, half-open on y to count shared vertices once
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let len2 = (b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2);
    let c = cross(a, b, p);
    if c.abs() > 1e-12 * len2.max(f64::MIN_POSITIVE) {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

fn collinear_overlap(a: Point, b: Point, c: Point, d: Point) -> bool {
    // adjacent edges a-b, c-d share exactly one endpoint; they overlap when
    // the far endpoint of one lies on the other
    let shared_ok = |p: Point, q0: Point, q1: Point| on_segment(p, q0, q1) && p != q0 && p != q1;
    shared_ok(a, c, d) || shared_ok(b, c, d) || shared_ok(c, a, b) || shared_ok(d, a, b)
}

/// A weighted point record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl PointRecord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, weight: 1.0 }
    }

    pub fn weighted(x: f64, y: f64, weight: f64) -> Self {
        Self { x, y, weight }
    }
}

/// Boundary points count as inside.
pub fn point_in_polygon(p: &PointRecord, poly: &Polygon) -> Result<bool> {
    poly.check_area()?;
    Ok(poly.contains([p.x, p.y]))
}

/// Uniform-grid bucket index over region bounding boxes.
struct BucketIndex {
    min: Point,
    cell: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl BucketIndex {
    fn build(regions: &[Polygon]) -> Option<Self> {
        let bounds: Vec<(Point, Point)> = regions.iter().map(Polygon::bounds).collect();
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for (lo, hi) in &bounds {
            for k in 0..2 {
                min[k] = min[k].min(lo[k]);
                max[k] = max[k].max(hi[k]);
            }
        }
        if !min[0].is_finite() {
            return None;
        }
        let side = (regions.len() as f64).sqrt().ceil().max(1.0) as usize;
        let dims = [side, side];
        let cell = [
            ((max[0] - min[0]) / side as f64).max(f64::MIN_POSITIVE),
            ((max[1] - min[1]) / side as f64).max(f64::MIN_POSITIVE),
        ];
        let mut index = Self {
            min,
            cell,
            dims,
            buckets: vec![Vec::new(); side * side],
        };
        for (r, (lo, hi)) in bounds.iter().enumerate() {
            let (c0, r0) = index.cell_of(*lo);
            let (c1, r1) = index.cell_of(*hi);
            for row in r0..=r1 {
                for col in c0..=c1 {
                    index.buckets[row * dims[0] + col].push(r);
                }
            }
        }
        Some(index)
    }

    fn cell_of(&self, p: Point) -> (usize, usize) {
        let clamp = |v: f64, k: usize| -> usize {
            let i = ((v - self.min[k]) / self.cell[k]).floor();
            (i.max(0.0) as usize).min(self.dims[k] - 1)
        };
        (clamp(p[0], 0), clamp(p[1], 1))
    }

    fn candidates(&self, p: Point) -> &[usize] {
        let (col, row) = self.cell_of(p);
        &self.buckets[row * self.dims[0] + col]
    }
}

/// Maps each point to the lowest-index region containing it, or `None`.
pub fn assign_points(points: &[PointRecord], regions: &[Polygon]) -> Result<Vec<Option<usize>>> {
    for r in regions {
        r.check_area()?;
    }
    let Some(index) = BucketIndex::build(regions) else {
        return Ok(vec![None; points.len()]);
    };
    Ok(points
        .iter()
        .map(|p| {
            let q = [p.x, p.y];
            // bucket lists are filled in increasing region order
            index
                .candidates(q)
                .iter()
                .copied()
                .find(|&r| {
                    let (lo, hi) = regions[r].bounds();
                    q[0] >= lo[0] && q[0] <= hi[0] && q[1] >= lo[1] && q[1] <= hi[1] && regions[r].contains(q)
                })
        })
        .collect())
}

/// Per-region weight totals from point records.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedPopulation {
    pub counts: CountVector,
    pub unassigned_points: usize,
    pub unassigned_weight: f64,
}

/// Sums point weights per region (one entry per polygon row).
pub fn synthesize_population(points: &[PointRecord], regions: &[Polygon]) -> Result<SynthesizedPopulation> {
    for p in points {
        if !(p.weight >= 0.0) || !p.weight.is_finite() {
            return Err(ReaggError::InvalidInput(format!(
                "point ({}, {}) has invalid weight {}",
                p.x, p.y, p.weight
            )));
        }
    }
    let assignment = assign_points(points, regions)?;
    let mut values = vec![0.0; regions.len()];
    let mut unassigned_points = 0;
    let mut unassigned_weight = 0.0;
    for (p, a) in points.iter().zip(&assignment) {
        match a {
            Some(r) => values[*r] += p.weight,
            None => {
                unassigned_points += 1;
                unassigned_weight += p.weight;
            }
        }
    }
    let ids = regions.iter().map(|r| r.id.clone()).collect();
    Ok(SynthesizedPopulation {
        counts: CountVector::new(ids, values)?,
        unassigned_points,
        unassigned_weight,
    })
}

/// Sums entries that share an id, keeping first-appearance order.
pub fn collapse_by_id(v: &CountVector) -> CountVector {
    let mut ids: Vec<String> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (id, &x) in v.ids.iter().zip(&v.values) {
        match seen.get(id) {
            Some(&i) => values[i] += x,
            None => {
                seen.insert(id.clone(), ids.len());
                ids.push(id.clone());
                values.push(x);
            }
        }
    }
    CountVector { ids, values }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_square(id: &str, dx: f64) -> Polygon {
        Polygon::new(id, vec![[dx, 0.], [dx + 1., 0.], [dx + 1., 1.], [dx, 1.]]).unwrap()
    }

    #[test]
    fn point_in_polygon_examples() {
        let sq = unit_square("a", 0.0);
        assert!(point_in_polygon(&PointRecord::new(0.5, 0.5), &sq).unwrap());
        assert!(!point_in_polygon(&PointRecord::new(2.0, 2.0), &sq).unwrap());
        assert!(point_in_polygon(&PointRecord::new(0.5, 0.0), &sq).unwrap());
        assert!(point_in_polygon(&PointRecord::new(1.0, 1.0), &sq).unwrap());
    }

    #[test]
    fn degenerate_polygons_rejected() {
        assert!(Polygon::new("flat", vec![[0., 0.], [1., 0.], [2., 0.]]).is_err());
        assert!(Polygon::new("short", vec![[0., 0.], [1., 0.]]).is_err());
        let bowtie = Polygon::new("bow", vec![[0., 0.], [1., 1.], [1., 0.], [0., 1.]]);
        // a bowtie has zero net signed area
        assert!(bowtie.is_err());
        let twisted = Polygon::new("tw", vec![[0., 0.], [2., 0.], [2., 2.], [1., -1.], [0., 2.]]).unwrap();
        assert!(twisted.validate().is_err());
        assert!(unit_square("ok", 0.0).validate().is_ok());
    }

    #[test]
    fn closing_vertex_dropped() {
        let p = Polygon::new("c", vec![[0., 0.], [1., 0.], [0., 1.], [0., 0.]]).unwrap();
        assert_eq!(p.exterior.len(), 3);
        assert!((p.area() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn assign_points_examples() {
        let regions = vec![unit_square("a", 0.0), unit_square("b", 1.0)];
        let single = assign_points(&[PointRecord::new(0.5, 0.5)], &regions[..1]).unwrap();
        assert_eq!(single, vec![Some(0)]);
        let pts = [PointRecord::new(0.5, 0.5), PointRecord::new(1.5, 0.5), PointRecord::new(1.0, 0.3), PointRecord::new(5., 5.)];
        assert_eq!(assign_points(&pts, &regions).unwrap(), vec![Some(0), Some(1), Some(0), None]);
    }

    #[test]
    fn synthesize_examples() {
        let regions = vec![unit_square("a", 0.0), unit_square("b", 1.0)];
        let pts = [
            PointRecord::new(0.1, 0.1),
            PointRecord::new(0.2, 0.9),
            PointRecord::new(0.7, 0.5),
            PointRecord::new(1.5, 0.5),
            PointRecord::new(9.0, 9.0),
        ];
        let pop = synthesize_population(&pts, &regions).unwrap();
        assert_eq!(pop.counts.values, vec![3.0, 1.0]);
        assert_eq!(pop.unassigned_points, 1);

        let empty = synthesize_population(&[], &regions).unwrap();
        assert_eq!(empty.counts.values, vec![0.0, 0.0]);

        let heavy = [PointRecord::weighted(0.5, 0.5, 2.5), PointRecord::weighted(0.25, 0.5, 2.5)];
        let pop = synthesize_population(&heavy, &regions[..1]).unwrap();
        assert_eq!(pop.counts.values, vec![5.0]);
    }

    #[test]
    fn multipart_regions_collapse() {
        let v = CountVector::new(vec!["a".into(), "b".into(), "a".into()], vec![1., 2., 3.]).unwrap();
        let c = collapse_by_id(&v);
        assert_eq!(c.ids, vec!["a", "b"]);
        assert_eq!(c.values, vec![4., 2.]);
    }
}
