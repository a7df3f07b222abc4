mod common;

use common::arb_excursion;
use levyforest::coded_tree::Excursion;
use levyforest::metric::{
    distortion, gh_exact, gh_lower_diam, gh_upper_coding, subsample, Correspondence, FiniteMetricTree,
};
use proptest::prelude::*;

fn sample_times(zeta: f64, us: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(us.iter().map(|u| u * zeta)).collect()
}

fn arb_finite_tree(points: usize) -> impl Strategy<Value = FiniteMetricTree> {
    (arb_excursion(16), prop::collection::vec(0.0..=1.0f64, points - 1))
        .prop_map(|(e, us)| subsample(&e, &sample_times(e.zeta(), &us)).unwrap())
}

fn unit_duration(e: &Excursion) -> Excursion {
    Excursion::new(e.heights().to_vec(), 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn subsamples_are_metric_trees(t in arb_finite_tree(7)) {
        prop_assert!(t.check_tree_axioms(1e-10).is_ok());
        for i in 0..t.len() {
            prop_assert_eq!(t.d(i, i), 0.0);
            for j in 0..t.len() {
                prop_assert_eq!(t.d(i, j), t.d(j, i));
            }
        }
    }

    #[test]
    fn gh_is_a_pseudometric(a in arb_finite_tree(4), b in arb_finite_tree(4), c in arb_finite_tree(4)) {
        let ab = gh_exact(&a, &b, 6).unwrap();
        let ba = gh_exact(&b, &a, 6).unwrap();
        let bc = gh_exact(&b, &c, 6).unwrap();
        let ac = gh_exact(&a, &c, 6).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(gh_exact(&a, &a, 6).unwrap(), 0.0);
        prop_assert!(ac <= ab + bc + 1e-10);
    }

    #[test]
    fn gh_sandwich(g1 in arb_excursion(12), g2 in arb_excursion(12), us in prop::collection::vec(0.0..=1.0f64, 4)) {
        // a common duration lets one set of times sample both trees
        let (g1, g2) = (unit_duration(&g1), unit_duration(&g2));
        let times = sample_times(1.0, &us);
        let a = subsample(&g1, &times).unwrap();
        let b = subsample(&g2, &times).unwrap();
        let ex = gh_exact(&a, &b, 6).unwrap();
        prop_assert!(gh_lower_diam(&a, &b) <= ex + 1e-12);
        prop_assert!(ex <= gh_upper_coding(&g1, &g2) + 1e-12);
        // the diagonal correspondence bounds the optimum
        let diag = Correspondence::new((0..a.len()).map(|i| (i, i)).collect(), &a, &b).unwrap();
        prop_assert!(ex <= 0.5 * distortion(&diag, &a, &b) + 1e-12);
    }

    #[test]
    fn scaling_a_tree(a in arb_finite_tree(5), r in 1.0..4.0f64) {
        let d = gh_exact(&a, &a.scaled(r), 6).unwrap();
        let want = 0.5 * (r - 1.0) * a.diameter();
        prop_assert!((d - want).abs() <= 1e-12 * want.max(1.0), "{} vs {}", d, want);
    }

    #[test]
    fn csv_roundtrip(a in arb_finite_tree(6)) {
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        prop_assert_eq!(FiniteMetricTree::read_csv(buf.as_slice()).unwrap(), a);
    }
}
