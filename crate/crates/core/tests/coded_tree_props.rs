mod common;

use common::arb_any_excursion;
use levyforest::coded_tree::Excursion;
use levyforest::galton_watson::{sample_tree, GrowOptions, OffspringDistribution};
use levyforest::rng::seeded;
use proptest::prelude::*;

fn times(e: &Excursion, us: &[f64]) -> Vec<f64> {
    us.iter().map(|u| u * e.zeta()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metric_axioms(e in arb_any_excursion(40), us in prop::collection::vec(0.0..=1.0f64, 3)) {
        let t = times(&e, &us);
        let d = |i: usize, j: usize| e.dist(t[i], t[j]).unwrap();
        prop_assert!(d(0, 1) >= 0.0);
        prop_assert_eq!(d(0, 1), d(1, 0));
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
    }

    #[test]
    fn four_point_condition(e in arb_any_excursion(40), us in prop::collection::vec(0.0..=1.0f64, 4)) {
        let t = times(&e, &us);
        let d = |i: usize, j: usize| e.dist(t[i], t[j]).unwrap();
        let (a, b, c) = (d(0, 1) + d(2, 3), d(0, 2) + d(1, 3), d(0, 3) + d(1, 2));
        prop_assert!(a <= b.max(c) + 1e-10);
        prop_assert!(b <= a.max(c) + 1e-10);
        prop_assert!(c <= a.max(b) + 1e-10);
    }

    #[test]
    fn reroot_is_an_isometry(e in arb_any_excursion(40), u0 in 0.0..1.0f64, us in prop::collection::vec(0.0..=1.0f64, 2)) {
        let z = e.zeta();
        let s0 = u0 * z;
        let r = e.reroot(s0).unwrap();
        prop_assert!((r.zeta() - z).abs() <= 1e-12 * z.max(1.0));
        let wrap = |x: f64| if s0 + x >= z { s0 + x - z } else { s0 + x };
        let t = times(&r, &us);
        let lhs = r.dist(t[0], t[1]).unwrap();
        let rhs = e.dist(wrap(t[0]), wrap(t[1])).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10, "{} vs {}", lhs, rhs);
        // the new root is the old vertex s0
        prop_assert!((r.value(t[0]) - e.dist(s0, wrap(t[0])).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn contour_reroot_at_a_corner_stays_on_the_grid(seed in any::<u64>(), k in 0usize..10_000) {
        let t = sample_tree(&OffspringDistribution::geometric(), GrowOptions::default(), &mut seeded(seed)).unwrap();
        prop_assume!(t.edges() > 0);
        let e = t.to_excursion(1.0, 1.0).unwrap();
        let r = e.reroot(e.time_of(k % e.steps())).unwrap();
        prop_assert!(r.knot_times().is_none());
        prop_assert_eq!(r.steps(), e.steps());
        prop_assert!(r.heights().windows(2).all(|w| (w[1] - w[0]).abs() == 1.0));
    }

    #[test]
    fn ancestor_characterization(e in arb_any_excursion(40), us in prop::collection::vec(0.0..=1.0f64, 2)) {
        let t = times(&e, &us);
        let (s, u) = (t[0], t[1]);
        let m = e.running_min(s.min(u), s.max(u)).unwrap();
        let gs = e.value(s);
        let on_path = (e.dist(0.0, s).unwrap() + e.dist(s, u).unwrap() - e.dist(0.0, u).unwrap()).abs() <= 1e-10;
        let is_ancestor = (m - gs).abs() <= 1e-10;
        prop_assert_eq!(on_path, is_ancestor);
    }

    #[test]
    fn level_components_partition_the_superlevel_set(e in arb_any_excursion(40), frac in 0.01..0.99f64, us in prop::collection::vec(0.0..=1.0f64, 16)) {
        let a = frac * e.height();
        let dec = e.level_decomposition(a);
        for w in dec.components.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for c in &dec.components {
            prop_assert!(c.start < c.end);
            prop_assert!((e.value(c.start) - a).abs() <= 1e-9);
            prop_assert!((e.value(c.end) - a).abs() <= 1e-9);
            prop_assert!(c.peak > 0.0);
        }
        for t in times(&e, &us) {
            let g = e.value(t);
            let inside = dec.components.iter().any(|c| c.start < t && t < c.end);
            if g > a + 1e-9 {
                prop_assert!(inside, "t = {} with g = {} > {} not covered", t, g, a);
            } else if g < a - 1e-9 {
                prop_assert!(!inside);
            }
        }
        for (c, sub) in dec.components.iter().zip(dec.sub_excursions(&e)) {
            prop_assert!((sub.zeta() - c.duration()).abs() <= 1e-12);
            prop_assert!((sub.height() - c.peak).abs() <= 1e-9);
            for &u in &us {
                let s = u * sub.zeta();
                prop_assert!((sub.value(s) - (e.value((c.start + s).min(c.end)) - a)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn truncate_and_components_reassemble_duration(e in arb_any_excursion(40), frac in 0.0..1.2f64) {
        let a = frac * e.height();
        let above: f64 = e.level_decomposition(a).components.iter().map(|c| c.duration()).sum();
        let tr = e.truncate(a);
        prop_assert!((tr.zeta() + above - e.zeta()).abs() <= 1e-10);
        prop_assert!((above - e.occupation(a, f64::INFINITY)).abs() <= 1e-10);
        prop_assert!(tr.height() <= a + 1e-12);
    }

    #[test]
    fn occupation_is_additive_over_bands(e in arb_any_excursion(40), cuts in prop::collection::vec(0.0..2.0f64, 2)) {
        let (lo, hi) = (cuts[0].min(cuts[1]), cuts[0].max(cuts[1]));
        let mid = 0.5 * (lo + hi);
        let whole = e.occupation(lo, hi);
        prop_assert!((whole - e.occupation(lo, mid) - e.occupation(mid, hi)).abs() <= 1e-12);
        prop_assert!(e.occupation(-1.0, f64::INFINITY) - e.zeta() <= 1e-12);
    }

    #[test]
    fn serialization_roundtrips(e in arb_any_excursion(40)) {
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        prop_assert_eq!(&Excursion::read_binary(buf.as_slice()).unwrap(), &e);
        prop_assert_eq!(&Excursion::from_ndjson(&e.to_ndjson()).unwrap(), &e);
    }
}

#[test]
fn counting_and_occupation_estimators_agree_as_eps_shrinks() {
    use levyforest::levy_sampler::sample_levy_tree;
    use levyforest::mechanism::BranchingMechanism;
    let m = BranchingMechanism::quadratic(1.0).unwrap();
    let e = sample_levy_tree(&m, 2000, 1.0, 17).unwrap().excursion;
    let a = 0.5;
    let gaps: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&eps| {
            let est = e.local_time_mass(a, eps, m.solve_v(eps).unwrap());
            (est.counting - est.occupation).abs() / est.occupation
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
}
