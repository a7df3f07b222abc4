mod common;

use common::arb_any_excursion;
use levyforest::fractal::{build_net, dyadic_grid, inner_octaves, level_set_dimension, net_count};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn nets_are_separated_and_cover(e in arb_any_excursion(60), frac in 0.02..1.5f64, us in prop::collection::vec(0.0..=1.0f64, 16)) {
        let delta = frac * e.height().max(1e-3);
        let net = build_net(&e, delta);
        prop_assert_eq!(net.packing_count, net.cover_count);
        prop_assert_eq!(net.packing_count, net.net_times.len());
        prop_assert_eq!(net.net_times[0], 0.0);
        if net.net_times.len() > 1 {
            prop_assert!(net.min_separation(&e) >= delta * (1.0 - 1e-9), "separation {} < {}", net.min_separation(&e), delta);
        }
        prop_assert!(net.cover_radius <= 3.0 * delta * (1.0 + 1e-9));
        // brute force at off-grid times
        for u in us {
            let t = u * e.zeta();
            let d = net.net_times.iter().map(|&s| e.dist(s, t).unwrap()).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= 3.0 * delta * (1.0 + 1e-9), "point {} at distance {} > 3 delta = {}", t, d, 3.0 * delta);
        }
    }

    #[test]
    fn net_counts_are_monotone(e in arb_any_excursion(60), frac in 0.02..1.0f64) {
        let delta = frac * e.height().max(1e-3);
        let coarse = net_count(&e, delta);
        let fine = net_count(&e, delta / 2.0);
        prop_assert!(coarse <= fine);
        // a 2 delta-separated set is no larger than a delta-net
        prop_assert!(net_count(&e, 2.0 * delta) <= build_net(&e, delta).cover_count);
    }

    #[test]
    fn level_set_counts_vanish_above_the_tree(e in arb_any_excursion(60)) {
        let grid = dyadic_grid(e.height().max(1e-3), 1, 4);
        let above = level_set_dimension(&e, 1.01 * e.height() + 1.0, &grid).unwrap();
        prop_assert!(above.counts.iter().all(|&c| c == 0));
    }
}

#[test]
fn inner_octaves_drop_both_ends() {
    assert_eq!(inner_octaves(&[1, 2, 3, 4, 5]), &[2, 3, 4]);
    assert!(inner_octaves(&[1, 2]).is_empty());
}

#[test]
fn tree_dimension_is_one_plus_level_set_dimension() {
    use levyforest::fractal::pooled_slope;
    use levyforest::levy_sampler::sample_levy_tree;
    use levyforest::mechanism::BranchingMechanism;
    let m = BranchingMechanism::quadratic(1.0).unwrap();
    let js: Vec<f64> = (3..=7).map(f64::from).collect();
    let (mut tree_rows, mut level_rows) = (Vec::new(), Vec::new());
    for i in 0..8 {
        let e = sample_levy_tree(&m, 600, 1.0, 300 + i).unwrap().excursion;
        let grid = dyadic_grid(e.height(), 2, 8);
        let counts: Vec<f64> = grid.iter().map(|&d| (net_count(&e, d) as f64).ln()).collect();
        tree_rows.push(inner_octaves(&counts).to_vec());
        let level = level_set_dimension(&e, 0.5 * e.height(), &grid).unwrap();
        let lc: Vec<f64> = level.counts.iter().map(|&c| (c.max(1) as f64).ln()).collect();
        level_rows.push(inner_octaves(&lc).to_vec());
    }
    let (t, tse) = pooled_slope(&tree_rows, &js);
    let (l, lse) = pooled_slope(&level_rows, &js);
    let gap = (t - 1.0 - l).abs();
    // combined standard errors, at two sigma
    let tol = 2.0 * (tse * tse + lse * lse).sqrt();
    assert!(gap <= tol, "dim T = {t:.3} (se {tse:.3}), dim T(a) = {l:.3} (se {lse:.3})");
}
