mod common;

use common::{arb_any_excursion, arb_excursion};
use levyforest::levy_sampler::sample_levy_tree;
use levyforest::mechanism::BranchingMechanism;
use levyforest::spatial::{assemble_superprocess, attach_labels, occupation_measure, MeasureCloud, SuperprocessOptions};
use levyforest::stattests::{mean, variance};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn labels_start_and_end_at_the_origin(e in arb_any_excursion(60), seed in any::<u64>(), x in prop::collection::vec(-5.0..5.0f64, 1..4)) {
        let st = attach_labels(e, &x, seed);
        prop_assert_eq!(st.len(), st.excursion.steps() + 1);
        prop_assert_eq!(st.label(0), x.as_slice());
        prop_assert_eq!(st.label(st.len() - 1), x.as_slice());
    }

    #[test]
    fn equivalent_times_carry_equal_labels(e in arb_excursion(60), seed in any::<u64>()) {
        let st = attach_labels(e, &[0.0, 0.0], seed);
        let e = &st.excursion;
        for i in 0..st.len() {
            for j in i + 1..st.len() {
                if e.dist(e.time_of(i), e.time_of(j)).unwrap() <= 1e-12 {
                    prop_assert_eq!(st.label(i), st.label(j), "grid times {} and {}", i, j);
                }
            }
        }
    }

    #[test]
    fn occupation_cloud_is_consistent(e in arb_any_excursion(60), seed in any::<u64>(), frac in 0.05..0.95f64) {
        let a = frac * e.height();
        let eps = 0.1 * e.height().max(1e-3);
        let want = e.occupation(a - eps, a) / eps;
        let st = attach_labels(e, &[1.0, -1.0, 0.5], seed);
        let cloud = occupation_measure(&st, a, eps);
        prop_assert!(cloud.atoms().all(|(_, w)| w > 0.0));
        let sum: f64 = cloud.atoms().map(|(_, w)| w).sum();
        prop_assert!((cloud.total - sum).abs() <= 1e-12 * sum.max(1.0));
        prop_assert!((cloud.total - want).abs() <= 1e-12 * want.max(1.0));
        prop_assert_eq!(MeasureCloud::from_ndjson(&cloud.to_ndjson()).unwrap(), cloud);
    }
}

#[test]
fn label_increments_have_variance_equal_to_distance() {
    let e = levyforest::coded_tree::Excursion::new(vec![0.0, 1.0, 0.5, 1.5, 0.25, 0.75, 0.0], 3.0).unwrap();
    let pairs = [(1usize, 3usize), (1, 5), (3, 5), (0, 3)];
    let reps = 20_000;
    let mut diffs = vec![Vec::with_capacity(reps); pairs.len()];
    for seed in 0..reps as u64 {
        let st = attach_labels(e.clone(), &[0.0], seed);
        for (d, &(i, j)) in diffs.iter_mut().zip(&pairs) {
            d.push(st.label(i)[0] - st.label(j)[0]);
        }
    }
    for (d, &(i, j)) in diffs.iter().zip(&pairs) {
        let want = e.dist(e.time_of(i), e.time_of(j)).unwrap();
        let got = variance(d);
        // relative sd of a sample variance is sqrt(2 / reps) ~ 1%
        assert!((got - want).abs() <= 0.05 * want, "pair ({i}, {j}): {got} vs {want}");
        assert!(mean(d).abs() <= 4.0 * (want / reps as f64).sqrt());
    }
}

fn holder_max(n: u32, seed: u64) -> f64 {
    let m = BranchingMechanism::quadratic(1.0).unwrap();
    let e = sample_levy_tree(&m, n, 1.0, seed).unwrap().excursion;
    let st = attach_labels(e, &[0.0, 0.0, 0.0], seed);
    let h = st.excursion.heights();
    (1..st.len())
        .map(|i| {
            let dw: f64 = st.label(i).iter().zip(st.label(i - 1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            dw / (h[i] - h[i - 1]).abs().powf(0.4)
        })
        .fold(0.0, f64::max)
}

#[test]
fn holder_ratio_is_bounded_across_resolutions() {
    for seed in [1u64, 2, 3] {
        let (coarse, fine) = (holder_max(50, seed), holder_max(200, seed));
        let r = fine / coarse;
        assert!((1.0 / 3.0..=3.0).contains(&r), "seed {seed}: {coarse} at n = 50, {fine} at n = 200");
    }
}

#[test]
fn total_mass_is_consistent_through_the_tree() {
    // E exp(-l Z_{a+b}) = E exp(-u_b(l) Z_a), on the same forests
    let m = BranchingMechanism::quadratic(1.0).unwrap();
    let (a, b, l) = (0.5, 0.5, 1.0);
    let ub = m.solve_u(b, l);
    let forests = 3_000;
    let diffs: Vec<f64> = (0..forests)
        .map(|i| {
            let s = assemble_superprocess(&m, &[(vec![0.0], 1.0)], &[a, a + b], 100, SuperprocessOptions::default(), 50_000 + i)
                .unwrap();
            (-l * s.levels[1].total).exp() - (-ub * s.levels[0].total).exp()
        })
        .collect();
    let se = (variance(&diffs) / forests as f64).sqrt();
    let gap = mean(&diffs);
    assert!(gap.abs() <= 3.0 * se + 0.003, "gap {gap} (se {se})");
}
