//! Cross-module property tests for the invariants the pipeline leans on.

use proptest::prelude::*;

use strutnet::eval::match_points;
use strutnet::pipeline::{extract_points, tile, tile_origins, TileGrid};
use strutnet::synth::render_mask;
use strutnet::training::loss_similar;
use strutnet::types::{Grid, HeatMap, Point, StrutPointSet};

fn arb_points(max_n: usize, dim: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((4.0..dim - 4.0, 4.0..dim - 4.0), 0..=max_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mask_rendering_is_order_independent(points in arb_points(8, 60.0), shift in 0usize..8) {
        let base = StrutPointSet::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let mut rotated = base.points.clone();
        if !rotated.is_empty() {
            let k = shift % rotated.len();
            rotated.rotate_left(k);
        }
        let a = render_mask(&base, (64, 64), 3.0).unwrap();
        let b = render_mask(&StrutPointSet::new(rotated), (64, 64), 3.0).unwrap();
        prop_assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn mask_values_are_binary_and_footprint_bounded(points in arb_points(6, 60.0)) {
        let set = StrutPointSet::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let mask = render_mask(&set, (64, 64), 3.0).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let v = mask.grid.get(y, x);
                prop_assert!(v == 0.0 || v == 1.0);
                if v == 1.0 {
                    let near = set
                        .points
                        .iter()
                        .any(|p| (p.x - x as f64).hypot(p.y - y as f64) <= 3.0);
                    prop_assert!(near, "unit pixel outside every footprint");
                }
            }
        }
    }

    #[test]
    fn threshold_monotonicity_on_bump_maps(
        bumps in prop::collection::vec((8.0..56.0f64, 8.0..56.0f64, 0.2..1.0f64), 1..6),
        t_lo in 0.0..0.5f64,
        dt in 0.0..0.5f64,
    ) {
        let mut grid = Grid::zeros(64, 64);
        for &(cy, cx, amp) in &bumps {
            for y in 0..64 {
                for x in 0..64 {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    grid.set(y, x, grid.get(y, x) + amp * (-d2 / 8.0).exp());
                }
            }
        }
        let map = HeatMap::prediction(grid);
        let (lo, _) = extract_points(&map, t_lo, 4.0).unwrap();
        let (hi, _) = extract_points(&map, (t_lo + dt).min(1.0), 4.0).unwrap();
        prop_assert!(hi.len() <= lo.len());
    }

    #[test]
    fn matching_accounts_for_every_point(
        pred in arb_points(8, 40.0),
        gt in arb_points(8, 40.0),
        tol in 1.0..10.0f64,
    ) {
        let pred = StrutPointSet::new(pred.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let gt = StrutPointSet::new(gt.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let m = match_points(&pred, &gt, tol).unwrap();
        prop_assert_eq!(m.tp + m.fp, pred.len());
        prop_assert_eq!(m.tp + m.fn_, gt.len());
        prop_assert!(m.tp <= pred.len().min(gt.len()));
        for &(_, _, d) in &m.pairs {
            prop_assert!(d <= tol);
        }
    }

    #[test]
    fn matching_is_translation_invariant(
        pred in arb_points(6, 40.0),
        gt in arb_points(6, 40.0),
        dx in -20.0..20.0f64,
        dy in -20.0..20.0f64,
    ) {
        let shift = |pts: &[(f64, f64)]| {
            StrutPointSet::new(pts.iter().map(|&(x, y)| Point::new(x + dx, y + dy)).collect())
        };
        let base_p = StrutPointSet::new(pred.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let base_g = StrutPointSet::new(gt.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let a = match_points(&base_p, &base_g, 5.0).unwrap();
        let b = match_points(&shift(&pred), &shift(&gt), 5.0).unwrap();
        prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
        prop_assert!((a.total_distance() - b.total_distance()).abs() < 1e-6);
    }

    #[test]
    fn similarity_loss_is_nonnegative_and_zero_only_at_fit(
        p_vals in prop::collection::vec(-0.5..1.5f64, 16),
        m_bits in prop::collection::vec(prop::bool::ANY, 16),
    ) {
        let m = Grid::from_vec(4, 4, m_bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
        let p = Grid::from_vec(4, 4, p_vals.clone());
        let loss = loss_similar(
            &HeatMap::prediction(p),
            &HeatMap::target(m.clone()).unwrap(),
        )
        .unwrap();
        prop_assert!(loss >= 0.0);
        let fits = p_vals
            .iter()
            .zip(m.data().iter())
            .all(|(&pv, &mv)| if mv > 0.0 { pv == mv } else { pv == 0.0 });
        prop_assert_eq!(loss == 0.0, fits);
    }

    #[test]
    fn tiling_covers_every_pixel_for_valid_grids(
        h in 64usize..160,
        w in 64usize..160,
        stride in 1usize..40,
        extra_margin in 0usize..8,
    ) {
        let grid = TileGrid {
            patch_size: 64,
            stride,
            margin: 12 + extra_margin,
        };
        prop_assume!(grid.validate(12).is_ok());
        let image = Grid::zeros(h, w);
        let tiles = tile(&image, &grid).unwrap();
        let mut covered = vec![false; h * w];
        for (_, (oy, ox)) in &tiles {
            let y_lo = if *oy == 0 { 0 } else { oy + grid.margin };
            let y_hi = if oy + 64 == h { h } else { oy + 64 - grid.margin };
            let x_lo = if *ox == 0 { 0 } else { ox + grid.margin };
            let x_hi = if ox + 64 == w { w } else { ox + 64 - grid.margin };
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    covered[y * w + x] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn origins_start_at_zero_and_end_flush(dim in 64usize..512, stride in 1usize..64) {
        let origins = tile_origins(dim, 64, stride);
        prop_assert_eq!(origins[0], 0);
        prop_assert_eq!(*origins.last().unwrap(), dim - 64);
        for pair in origins.windows(2) {
            prop_assert!(pair[1] > pair[0]);
            prop_assert!(pair[1] - pair[0] <= stride);
        }
    }
}

/// The target representation is information-preserving: extraction from a
/// rendered ground-truth mask recovers every point within a pixel.
#[test]
fn ground_truth_masks_round_trip_through_extraction() {
    use strutnet::synth::{generate_sample, SynthConfig};
    let cfg = SynthConfig {
        image_size: 96,
        lumen_radius_range: (20.0, 27.0),
        wall_thickness_range: (8.0, 13.0),
        strut_count_range: (5, 9),
        strut_bloom_sigma: 2.2,
        catheter_ring_radius: 7.0,
        distractor_count_range: (1, 4),
        rng_seed: 123,
        ..SynthConfig::default()
    };
    for index in 0..25 {
        let (_, points) = generate_sample(&cfg, index).unwrap();
        let mask = render_mask(&points, (96, 96), 3.0).unwrap();
        let (extracted, _) = extract_points(&mask, 0.5, 4.0).unwrap();
        assert_eq!(extracted.len(), points.len(), "index {}", index);
        for p in &points.points {
            let nearest = extracted
                .points
                .iter()
                .map(|q| q.distance(p))
                .fold(f64::INFINITY, f64::min);
            assert!(
                nearest <= 1.0,
                "index {}: point {:?} recovered {:.3}px away",
                index,
                p,
                nearest
            );
        }
    }
}
