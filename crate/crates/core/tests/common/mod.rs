#![allow(dead_code)]

use levyforest::coded_tree::Excursion;
use levyforest::rng::Rng;
use rand::Rng as _;

/// A random piecewise-linear excursion with `2..=max_steps` steps. Some
/// draws snap heights to a coarse lattice so ties and plateaus occur.
pub fn random_excursion(rng: &mut Rng, max_steps: usize) -> Excursion {
    let steps = rng.random_range(2..=max_steps.max(2));
    let lattice = rng.random_bool(0.3);
    let mut h = Vec::with_capacity(steps + 1);
    h.push(0.0);
    for _ in 1..steps {
        let y: f64 = rng.random_range(0.0..2.0);
        h.push(if lattice { (y * 4.0).round() / 4.0 } else { y });
    }
    h.push(0.0);
    let zeta = rng.random_range(0.5..3.0);
    Excursion::new(h, zeta).expect("valid excursion")
}

/// Every Dyck path with `edges` up-steps, as contour height sequences.
pub fn dyck_paths(edges: u32) -> Vec<Vec<u32>> {
    fn go(cur: &mut Vec<u32>, ups: u32, downs: u32, edges: u32, out: &mut Vec<Vec<u32>>) {
        if ups == edges && downs == edges {
            out.push(cur.clone());
            return;
        }
        let h = *cur.last().unwrap();
        if ups < edges {
            cur.push(h + 1);
            go(cur, ups + 1, downs, edges, out);
            cur.pop();
        }
        if downs < ups {
            cur.push(h - 1);
            go(cur, ups, downs + 1, edges, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(&mut vec![0], 0, 0, edges, &mut out);
    out
}

/// Piecewise-linear excursions with uniform steps, optionally snapped to a
/// lattice so plateaus and ties occur.
pub fn arb_excursion(max_steps: usize) -> impl proptest::strategy::Strategy<Value = Excursion> {
    use proptest::prelude::*;
    (prop::collection::vec(0.0..2.0f64, 1..max_steps.max(2)), 0.5..3.0f64, any::<bool>()).prop_map(
        |(inner, zeta, lattice)| {
            let mut h = vec![0.0];
            h.extend(inner.into_iter().map(|y| if lattice { (y * 4.0).round() / 4.0 } else { y }));
            h.push(0.0);
            Excursion::new(h, zeta).expect("valid excursion")
        },
    )
}

/// Uniform or knot-timed excursions, the latter obtained by re-rooting at a
/// time off the grid.
pub fn arb_any_excursion(max_steps: usize) -> impl proptest::strategy::Strategy<Value = Excursion> {
    use proptest::prelude::*;
    (arb_excursion(max_steps), 0.0..1.0f64, any::<bool>()).prop_map(|(e, u, knotted)| {
        if knotted { e.reroot(u * e.zeta()).expect("reroot inside [0, zeta)") } else { e }
    })
}
