use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use reagg_core::aggregation::null_space;
use reagg_core::conditioning::{condition, McmcConfig, Strategy as Conditioning};
use reagg_core::geometry::{grid_base_geometry, GridSpec};
use reagg_core::io::{counts_csv, parse_counts_csv};
use reagg_core::{build_correspondence, weighted_feature, AggregationMatrix, CountVector, LatentDistribution, NullSpaceFrame, Polygon};

/// Group labels where every group in `0..n_groups` occurs at least once.
fn assignment() -> impl Strategy<Value = (Vec<usize>, usize)> {
    (1usize..60).prop_flat_map(|n_base| {
        (1..=n_base).prop_flat_map(move |n_groups| {
            prop::collection::vec(0..n_groups, n_base).prop_map(move |mut v| {
                for (g, slot) in v.iter_mut().enumerate().take(n_groups) {
                    *slot = g;
                }
                (v, n_groups)
            })
        })
    })
}

fn matrix((v, n): &(Vec<usize>, usize)) -> AggregationMatrix {
    AggregationMatrix::from_assignment(v, *n).unwrap()
}

proptest! {
    #[test]
    fn null_space_is_orthonormal_and_annihilated(case in assignment()) {
        let a = matrix(&case);
        let n = null_space(&a).to_dense();
        prop_assert_eq!(n.ncols(), a.n_base() - a.n_groups());
        let an = a.aggregate_rows(&n).unwrap();
        prop_assert!(an.norm() <= 1e-10);
        prop_assert!((n.transpose() * &n - DMatrix::identity(n.ncols(), n.ncols())).norm() <= 1e-10);
    }

    #[test]
    fn frame_round_trips_solutions(case in assignment(), seed in any::<u64>()) {
        let a = matrix(&case);
        let y_s: Vec<f64> = (0..a.n_groups()).map(|g| ((seed >> (g % 48)) % 500) as f64).collect();
        let frame = NullSpaceFrame::from_values(&a, &y_s).unwrap();
        let v: Vec<f64> = (0..frame.n_free()).map(|i| (i as f64 * 0.37).sin() * 20.0).collect();
        let y = frame.parameterize(&v).unwrap();
        prop_assert!(frame.constraint_violation(&y).unwrap() <= 1e-9);
        let back = frame.coordinates(&y).unwrap();
        for (p, q) in back.iter().zip(&v) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn correspondence_is_column_stochastic(src in assignment(), pops in prop::collection::vec(0.1f64..100.0, 60)) {
        let a_sb = matrix(&src);
        let n_base = a_sb.n_base();
        let dest: Vec<usize> = (0..n_base).map(|b| b / 2).collect();
        let a_db = AggregationMatrix::from_assignment(&dest, n_base.div_ceil(2)).unwrap();
        let x = DMatrix::from_column_slice(n_base, 1, &pops[..n_base]);
        let c = build_correspondence(&a_db, &a_sb, &weighted_feature(&x, &[1.0]).unwrap()).unwrap();
        for s in c.column_sums() {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
        let y: Vec<f64> = (0..a_sb.n_groups()).map(|i| i as f64 * 3.0 + 1.0).collect();
        let moved: f64 = c.apply(&y).unwrap().iter().sum();
        prop_assert!((moved - y.iter().sum::<f64>()).abs() <= 1e-9 * moved.max(1.0));
    }

    #[test]
    fn exact_conditioning_satisfies_constraint(case in assignment(), scale in 0.5f64..50.0) {
        let a = matrix(&case);
        let n = a.n_base();
        let latent = LatentDistribution::Gaussian {
            mean: DVector::from_fn(n, |i, _| 10.0 + i as f64),
            cov: DMatrix::from_fn(n, n, |i, j| if i == j { scale + i as f64 } else { 0.1 }),
        };
        let y_s: Vec<f64> = a.aggregate(&vec![12.0; n]).unwrap();
        let frame = NullSpaceFrame::from_values(&a, &y_s).unwrap();
        let post = condition(&latent, &frame, Conditioning::Exact, &McmcConfig::default(), false).unwrap();
        prop_assert!(frame.constraint_violation(&post.mean()).unwrap() <= 1e-9);
        prop_assert!(post.marginal_variance().iter().all(|v| *v >= -1e-9));
    }

    #[test]
    fn counts_csv_round_trips(values in prop::collection::vec(0u32..1_000_000, 1..40)) {
        let ids: Vec<String> = (0..values.len()).map(|i| format!("r,{i}\"")).collect();
        let v = CountVector::new(ids, values.iter().map(|&x| x as f64).collect()).unwrap();
        prop_assert_eq!(parse_counts_csv("prop", &counts_csv(&v)).unwrap(), v);
    }

    #[test]
    fn grid_conserves_rectangle_area(
        x in -10.0f64..10.0, y in -10.0f64..10.0, w in 0.1f64..8.0, h in 0.1f64..8.0, cell in 0.2f64..3.0,
    ) {
        let rect = Polygon::new("r", vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]]).unwrap();
        let cols = (w / cell).ceil() as usize + 2;
        let rows = (h / cell).ceil() as usize + 2;
        let grid = GridSpec::new([x - cell / 2.0, y - cell / 2.0], cell, cell, cols, rows).unwrap();
        let table = grid_base_geometry(std::slice::from_ref(&rect), &grid).unwrap();
        prop_assert!((table.region_totals(1)[0] - w * h).abs() <= 1e-9 * w * h);
    }
}
