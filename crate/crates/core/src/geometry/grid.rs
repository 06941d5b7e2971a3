use serde::{Deserialize, Serialize};

use super::{ring_area, Point, Polygon};
use crate::error::{ReaggError, Result};

/// An axis-aligned regular grid of `n_cols × n_rows` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub cell_width: f64,
    pub cell_height: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl GridSpec {
    pub fn new(origin: Point, cell_width: f64, cell_height: f64, n_cols: usize, n_rows: usize) -> Result<Self> {
        let grid = Self {
            x0: origin[0],
            y0: origin[1],
            cell_width,
            cell_height,
            n_cols,
            n_rows,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_width > 0.0 && self.cell_height > 0.0) || !self.x0.is_finite() || !self.y0.is_finite() {
            return Err(ReaggError::InvalidInput("grid cells must have positive finite size".into()));
        }
        if self.n_cols == 0 || self.n_rows == 0 {
            return Err(ReaggError::InvalidInput("grid must have at least one row and column".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_cols * self.n_rows
    }

    /// Row-major cell id.
    pub fn cell_id(&self, col: usize, row: usize) -> usize {
        row * self.n_cols + col
    }

    /// `(min, max)` corners of a cell.
    pub fn cell_rect(&self, col: usize, row: usize) -> (Point, Point) {
        let x = self.x0 + col as f64 * self.cell_width;
        let y = self.y0 + row as f64 * self.cell_height;
        ([x, y], [x + self.cell_width, y + self.cell_height])
    }

    fn col_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        index_range(lo, hi, self.x0, self.cell_width, self.n_cols)
    }

    fn row_range(&self, lo: f64, hi: f64) -> Option<(usize, usize)> {
        index_range(lo, hi, self.y0, self.cell_height, self.n_rows)
    }
}

fn index_range(lo: f64, hi: f64, origin: f64, step: f64, n: usize) -> Option<(usize, usize)> {
    let a = ((lo - origin) / step).floor();
    let b = ((hi - origin) / step).ceil() - 1.0;
    if b < 0.0 || a > (n - 1) as f64 {
        return None;
    }
    let a = a.max(0.0) as usize;
    let b = (b.max(0.0) as usize).min(n - 1);
    Some((a, b.max(a)))
}

/// Sutherland–Hodgman clip of a ring against an axis-aligned rectangle.
///
/// The rectangle is convex, so the clipped ring has exactly the area of the
/// intersection even for non-convex subjects (any degenerate bridging edges
/// enclose no area).
pub fn clip_to_rect(ring: &[Point], min: Point, max: Point) -> Vec<Point> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left(f64),
        Right(f64),
        Bottom(f64),
        Top(f64),
    }
    impl Edge {
        fn inside(self, p: Point) -> bool {
            match self {
                Edge::Left(x) => p[0] >= x,
                Edge::Right(x) => p[0] <= x,
                Edge::Bottom(y) => p[1] >= y,
                Edge::Top(y) => p[1] <= y,
            }
        }
        fn intersect(self, a: Point, b: Point) -> Point {
            match self {
                Edge::Left(x) | Edge::Right(x) => {
                    let t = (x - a[0]) / (b[0] - a[0]);
                    [x, a[1] + t * (b[1] - a[1])]
                }
                Edge::Bottom(y) | Edge::Top(y) => {
                    let t = (y - a[1]) / (b[1] - a[1]);
                    [a[0] + t * (b[0] - a[0]), y]
                }
            }
        }
    }

    let mut output = ring.to_vec();
    for edge in [Edge::Left(min[0]), Edge::Right(max[0]), Edge::Bottom(min[1]), Edge::Top(max[1])] {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let (cin, pin) = (edge.inside(cur), edge.inside(prev));
            if cin {
                if !pin {
                    output.push(edge.intersect(prev, cur));
                }
                output.push(cur);
            } else if pin {
                output.push(edge.intersect(prev, cur));
            }
        }
    }
    output
}

/// One `(region, cell)` overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridIntersection {
    pub region_id: String,
    pub region_index: usize,
    pub cell_id: usize,
    pub col: usize,
    pub row: usize,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionTable {
    pub rows: Vec<GridIntersection>,
    /// Polygon area not covered by any grid cell, per region.
    pub uncovered_area: Vec<f64>,
}

impl IntersectionTable {
    /// Intersection area summed per region.
    pub fn region_totals(&self, n_regions: usize) -> Vec<f64> {
        let mut totals = vec![0.0; n_regions];
        for r in &self.rows {
            totals[r.region_index] += r.area;
        }
        totals
    }
}

/// Intersects every region with the grid cells its bounding box touches.
///
/// Rows with zero intersection area (shared edges, corner touches) are
/// dropped; slivers below `1e-14` of the region's area count as zero.
pub fn grid_base_geometry(regions: &[Polygon], grid: &GridSpec) -> Result<IntersectionTable> {
    grid.validate()?;
    let mut rows = Vec::new();
    let mut uncovered_area = Vec::with_capacity(regions.len());
    for (index, region) in regions.iter().enumerate() {
        region.check_area()?;
        let area = region.area();
        let (lo, hi) = region.bounds();
        let mut covered = 0.0;
        if let (Some((c0, c1)), Some((r0, r1))) = (grid.col_range(lo[0], hi[0]), grid.row_range(lo[1], hi[1])) {
            for row in r0..=r1 {
                for col in c0..=c1 {
                    let (cmin, cmax) = grid.cell_rect(col, row);
                    let clipped = clip_to_rect(&region.exterior, cmin, cmax);
                    let a = ring_area(&clipped);
                    if a > 1e-14 * area {
                        covered += a;
                        rows.push(GridIntersection {
                            region_id: region.id.clone(),
                            region_index: index,
                            cell_id: grid.cell_id(col, row),
                            col,
                            row,
                            area: a,
                        });
                    }
                }
            }
        }
        uncovered_area.push((area - covered).max(0.0));
    }
    Ok(IntersectionTable { rows, uncovered_area })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_grid() -> GridSpec {
        GridSpec::new([0.0, 0.0], 0.5, 0.5, 2, 2).unwrap()
    }

    #[test]
    fn unit_square_on_two_by_two_grid() {
        let sq = Polygon::new("sq", vec![[0., 0.], [1., 0.], [1., 1.], [0., 1.]]).unwrap();
        let table = grid_base_geometry(&[sq], &half_grid()).unwrap();
        assert_eq!(table.rows.len(), 4);
        for r in &table.rows {
            assert!((r.area - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_cover() {
        let sq = Polygon::new("sq", vec![[0., 0.], [1., 0.], [1., 1.], [0., 1.]]).unwrap();
        let grid = GridSpec::new([0.0, 0.0], 1.0, 1.0, 1, 1).unwrap();
        let table = grid_base_geometry(&[sq], &grid).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert!((table.rows[0].area - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_conserves_area() {
        let tri = Polygon::new("t", vec![[0., 0.], [1., 0.], [0., 1.]]).unwrap();
        let table = grid_base_geometry(&[tri], &half_grid()).unwrap();
        // the upper-right cell only touches the hypotenuse at a corner
        assert_eq!(table.rows.len(), 3);
        let total: f64 = table.rows.iter().map(|r| r.area).sum();
        assert!((total - 0.5).abs() < 1e-15);
        // hand oracle: lower-left cell fully inside, other two get 1/8 each
        let by_cell: Vec<(usize, f64)> = table.rows.iter().map(|r| (r.cell_id, r.area)).collect();
        assert!(by_cell.contains(&(0, 0.25)));
        assert!(by_cell.contains(&(1, 0.125)));
        assert!(by_cell.contains(&(2, 0.125)));
    }

    #[test]
    fn concave_subject_clips_exactly() {
        // U shape: 3x2 box minus a 1x1 notch from the top middle
        let u = Polygon::new(
            "u",
            vec![[0., 0.], [3., 0.], [3., 2.], [2., 2.], [2., 1.], [1., 1.], [1., 2.], [0., 2.]],
        )
        .unwrap();
        assert!((u.area() - 5.0).abs() < 1e-15);
        // cell [0.5, 2.5]²: U covers [0.5, 2.5] x [0.5, 2] minus the notch
        let clipped = clip_to_rect(&u.exterior, [0.5, 0.5], [2.5, 2.5]);
        assert!((ring_area(&clipped) - (3.0 - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn uncovered_area_reported() {
        let sq = Polygon::new("sq", vec![[0., 0.], [2., 0.], [2., 1.], [0., 1.]]).unwrap();
        let grid = GridSpec::new([0.0, 0.0], 1.0, 1.0, 1, 1).unwrap();
        let table = grid_base_geometry(&[sq], &grid).unwrap();
        assert!((table.uncovered_area[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_grid_rejected() {
        assert!(GridSpec::new([0., 0.], 0.0, 1.0, 1, 1).is_err());
        assert!(GridSpec::new([0., 0.], 1.0, 1.0, 0, 1).is_err());
    }
}
