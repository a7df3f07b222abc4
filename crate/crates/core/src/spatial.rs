//! Brownian labels on coded trees, occupation measures and Poisson forests
//! of labelled trees.

use std::collections::HashSet;

use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coded_tree::Excursion;
use crate::error::{Error, Result};
use crate::galton_watson::{ConditionedSampler, ExactSampler, GrowOptions};
use crate::levy_sampler::discretize;
use crate::mechanism::BranchingMechanism;
use crate::parallel::map_indexed;
use crate::quad::integrate;
use crate::rng::{derive_seed, seeded, task_rng, Rng};
use crate::stattests::ols_slope;

/// An excursion with an `R^k` label at every grid time.
#[derive(Debug, Clone)]
pub struct SpatialTree {
    pub excursion: Excursion,
    labels: Vec<f64>,
    pub origin: Vec<f64>,
    pub k: usize,
}

impl SpatialTree {
    pub fn label(&self, i: usize) -> &[f64] {
        &self.labels[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.labels.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Runs the discrete snake along the contour of `e`, started at `x`.
pub fn attach_labels(e: Excursion, x: &[f64], seed: u64) -> SpatialTree {
    attach_labels_with(e, x, &mut seeded(seed))
}

pub fn attach_labels_with(e: Excursion, x: &[f64], rng: &mut Rng) -> SpatialTree {
    let k = x.len();
    assert!(k > 0, "labels need at least one coordinate");
    let h = e.heights();
    let mut labels = Vec::with_capacity(h.len() * k);
    // ancestral line of the current point: heights and flat labels
    let mut stack_h: Vec<f64> = vec![h[0]];
    let mut stack_l: Vec<f64> = x.to_vec();
    labels.extend_from_slice(x);
    let mut step = vec![0.0; k];
    for &y in &h[1..] {
        let top = *stack_h.last().expect("stack holds the root");
        if y > top {
            let sd = (y - top).sqrt();
            let base = stack_l.len() - k;
            for (j, s) in step.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *s = stack_l[base + j] + sd * z;
            }
            stack_h.push(y);
            stack_l.extend_from_slice(&step);
        } else if y < top {
            let tol = 1e-12 * y.abs().max(1.0);
            let mut popped: Option<(f64, Vec<f64>)> = None;
            while stack_h.len() > 1 && *stack_h.last().unwrap() > y + tol {
                let hh = stack_h.pop().unwrap();
                let ll = stack_l.split_off(stack_l.len() - k);
                popped = Some((hh, ll));
            }
            let lo = *stack_h.last().unwrap();
            if lo < y - tol {
                // the ancestral line is cut inside an edge: Brownian bridge
                let (hi, l_hi) = popped.expect("descending step popped an entry");
                let base = stack_l.len() - k;
                let w = (y - lo) / (hi - lo);
                let sd = ((y - lo) * (hi - y) / (hi - lo)).max(0.0).sqrt();
                for (j, s) in step.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    *s = stack_l[base + j] + w * (l_hi[j] - stack_l[base + j]) + sd * z;
                }
                stack_h.push(y);
                stack_l.extend_from_slice(&step);
            }
        }
        labels.extend_from_slice(&stack_l[stack_l.len() - k..]);
    }
    SpatialTree { excursion: e, labels, origin: x.to_vec(), k }
}

/// Value of `int_0^1 (log v(eps^2))^{1/2} d eps` with `log` clipped at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyCheck {
    pub holds: bool,
    pub integral: f64,
    pub tail_bound: f64,
}

/// Numerically integrates the entropy condition on the substitution
/// `eps = e^{-t}`, bounding the tail beyond `t = T` by linear growth of
/// `log v(e^{-2t})`.
pub fn entropy_condition_check(m: &BranchingMechanism) -> EntropyCheck {
    const T: f64 = 15.0;
    let logv = |t: f64| m.solve_v((-2.0 * t).exp()).map(|v| v.ln().max(0.0));
    let (Ok(l_t), Ok(l_prev)) = (logv(T), logv(T - 1.0)) else {
        return EntropyCheck { holds: false, integral: f64::INFINITY, tail_bound: f64::INFINITY };
    };
    let (body, _) = integrate(|t| logv(t).map(|l| l.sqrt()).unwrap_or(f64::NAN) * (-t).exp(), 0.0, T, 1e-10, 1e-8);
    let rate = (l_t - l_prev).max(0.0);
    // sqrt(L + r s) <= sqrt(L) + sqrt(r s) and int_0^inf sqrt(s) e^{-s} ds < 1
    let tail_bound = (-T).exp() * (l_t.sqrt() + rate.sqrt());
    let holds = body.is_finite() && m.indices().gamma_low > 1.0;
    EntropyCheck { holds, integral: body + 0.5 * tail_bound, tail_bound }
}

/// Weighted points in `R^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureCloud {
    pub a: f64,
    pub k: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    /// Sum of the weights in insertion order.
    pub total: f64,
}

impl MeasureCloud {
    pub fn empty(a: f64, k: usize) -> Self {
        Self { a, k, points: Vec::new(), weights: Vec::new(), total: 0.0 }
    }

    pub fn push(&mut self, x: &[f64], w: f64) {
        assert_eq!(x.len(), self.k);
        if w > 0.0 {
            self.points.extend_from_slice(x);
            self.weights.push(w);
            self.total += w;
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn atom(&self, i: usize) -> (&[f64], f64) {
        (&self.points[i * self.k..(i + 1) * self.k], self.weights[i])
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(|i| self.atom(i))
    }

    /// Sums clouds at the same level.
    pub fn merge(&mut self, other: &MeasureCloud) {
        assert_eq!(self.k, other.k);
        for (x, w) in other.atoms() {
            self.push(x, w);
        }
    }

    pub fn to_ndjson(&self) -> String {
        let atoms: Vec<Vec<f64>> = self
            .atoms()
            .map(|(x, w)| {
                let mut v = x.to_vec();
                v.push(w);
                v
            })
            .collect();
        serde_json::json!({ "a": self.a, "atoms": atoms }).to_string()
    }

    pub fn from_ndjson(line: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            a: f64,
            atoms: Vec<Vec<f64>>,
        }
        let raw: Raw = serde_json::from_str(line)?;
        let k = raw.atoms.first().map_or(1, |v| v.len().saturating_sub(1));
        if k == 0 {
            return Err(Error::Format("atom without coordinates".into()));
        }
        let mut c = MeasureCloud::empty(raw.a, k);
        for v in &raw.atoms {
            if v.len() != k + 1 || !(v[k] > 0.0) {
                return Err(Error::Format("atoms need k coordinates and a positive weight".into()));
            }
            c.push(&v[..k], v[k]);
        }
        Ok(c)
    }
}

/// Occupation measure of the band `(a - eps, a]`, carried by grid labels.
pub fn occupation_measure(st: &SpatialTree, a: f64, eps: f64) -> MeasureCloud {
    let e = &st.excursion;
    let (lo, hi) = (a - eps, a);
    let occ = e.segment_occupations(lo, hi);
    let h = e.heights();
    let in_band = |y: f64| y > lo && y <= hi;
    let mut cloud = MeasureCloud::empty(a, st.k);
    for (i, &o) in occ.iter().enumerate() {
        if o <= 0.0 {
            continue;
        }
        let j = if in_band(h[i + 1]) {
            i + 1
        } else if in_band(h[i]) {
            i
        } else {
            // the step crosses the whole band
            let mid = 0.5 * (lo + hi);
            if (h[i + 1] - mid).abs() < (h[i] - mid).abs() { i + 1 } else { i }
        };
        cloud.push(st.label(j), o / eps);
    }
    cloud
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperprocessOptions {
    /// Trees lower than this are dropped; defaults to 10 generations.
    pub threshold: Option<f64>,
    /// Occupation window; defaults to 2 generations.
    pub eps: Option<f64>,
    pub node_cap: usize,
}

impl Default for SuperprocessOptions {
    fn default() -> Self {
        Self { threshold: None, eps: None, node_cap: 2_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct SuperprocessSample {
    pub levels: Vec<MeasureCloud>,
    pub threshold: f64,
    pub eps: f64,
    /// Poisson intensity of kept trees per unit mass at scale `n`.
    pub intensity: f64,
    /// `v(threshold)`, the same intensity in the limit.
    pub continuum_intensity: f64,
    /// `1 - intensity / continuum_intensity`.
    pub intensity_bias: f64,
    pub trees: usize,
}

/// Poisson forest of labelled trees started from the atoms of `mu`, read
/// off at the levels in `a_grid`.
pub fn assemble_superprocess(
    m: &BranchingMechanism,
    mu: &[(Vec<f64>, f64)],
    a_grid: &[f64],
    n: u32,
    opts: SuperprocessOptions,
    seed: u64,
) -> Result<SuperprocessSample> {
    let k = mu.first().map(|(x, _)| x.len()).ok_or_else(|| Error::Degenerate("empty initial measure".into()))?;
    if mu.iter().any(|(x, w)| x.len() != k || !(*w > 0.0)) {
        return Err(Error::Degenerate("initial atoms need a common dimension and positive mass".into()));
    }
    let (off, norm) = discretize(m, n)?;
    let threshold = opts.threshold.unwrap_or(10.0 * norm.height_scale);
    let eps = opts.eps.unwrap_or(2.0 * norm.height_scale);
    let g = norm.generation(threshold).max(1);
    let x_g = off.height_tail(g)[g as usize];
    let intensity = norm.population * x_g;
    let continuum_intensity = m.solve_v(threshold)?;
    let top = a_grid.iter().cloned().fold(0.0, f64::max);
    let depth = g.max(norm.generation(top) + 1);
    let grow = GrowOptions { node_cap: opts.node_cap, depth_cap: Some(depth) };

    let mut rng = seeded(derive_seed(seed, u64::MAX));
    let mut roots: Vec<usize> = Vec::new();
    for (j, (_, w)) in mu.iter().enumerate() {
        let count = Poisson::new(w * intensity).map_err(|e| Error::Degenerate(e.to_string()))?.sample(&mut rng) as usize;
        roots.extend(std::iter::repeat_n(j, count));
    }
    let per_tree = map_indexed(roots.len(), |i| -> Result<Vec<MeasureCloud>> {
        let mut r = task_rng(seed, i as u64);
        let tree = ExactSampler.sample(&off, g, grow, 1000, &mut r)?.tree;
        let e = tree.to_excursion(norm.height_scale, norm.time_scale)?;
        let st = attach_labels_with(e, &mu[roots[i]].0, &mut r);
        Ok(a_grid.iter().map(|&a| if a > 0.0 { occupation_measure(&st, a, eps) } else { MeasureCloud::empty(0.0, k) }).collect())
    });
    let mut levels: Vec<MeasureCloud> = a_grid
        .iter()
        .map(|&a| {
            let mut c = MeasureCloud::empty(a, k);
            if a <= 0.0 {
                for (x, w) in mu {
                    c.push(x, *w);
                }
            }
            c
        })
        .collect();
    for clouds in per_tree {
        for (lvl, c) in levels.iter_mut().zip(clouds?) {
            if lvl.a > 0.0 {
                lvl.merge(&c);
            }
        }
    }
    Ok(SuperprocessSample {
        levels,
        threshold,
        eps,
        intensity,
        continuum_intensity,
        intensity_bias: 1.0 - intensity / continuum_intensity,
        trees: roots.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeDimension {
    pub slope: f64,
    pub stderr: f64,
    pub deltas: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Box counting of the pooled (unweighted) atoms on axis-aligned grids.
pub fn range_box_dimension(clouds: &[MeasureCloud], delta_grid: &[f64]) -> Result<RangeDimension> {
    let k = clouds.first().map(|c| c.k).unwrap_or(0);
    if k == 0 || k > 8 || clouds.iter().any(|c| c.k != k) {
        return Err(Error::Degenerate("clouds need a common dimension between 1 and 8".into()));
    }
    if clouds.iter().all(|c| c.is_empty()) {
        return Err(Error::Degenerate("no atoms to count".into()));
    }
    if delta_grid.len() < 2 {
        return Err(Error::Degenerate("need at least two box sizes".into()));
    }
    let counts: Vec<usize> = delta_grid
        .iter()
        .map(|&d| {
            let mut boxes: HashSet<Vec<i64>> = HashSet::new();
            for c in clouds {
                for (x, _) in c.atoms() {
                    boxes.insert(x.iter().map(|v| (v / d).floor() as i64).collect());
                }
            }
            boxes.len()
        })
        .collect();
    let x: Vec<f64> = delta_grid.iter().map(|d| -d.ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, stderr) = ols_slope(&x, &y);
    Ok(RangeDimension { slope, stderr, deltas: delta_grid.to_vec(), counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_descent_mirrors_ascent() {
        let e = Excursion::new(vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.75, 0.5, 0.25, 0.0], 1.0).unwrap();
        let st = attach_labels(e, &[1.0, -2.0], 7);
        for i in 0..=4 {
            assert_eq!(st.label(i), st.label(8 - i));
        }
        assert_eq!(st.label(0), &[1.0, -2.0]);
        assert_ne!(st.label(2), st.label(0));
    }

    #[test]
    fn retraction_inside_an_edge_is_consistent() {
        // descend to 0.5 inside the edge [0, 1], then climb again
        let e = Excursion::new(vec![0.0, 1.0, 0.5, 1.5, 0.0], 4.0).unwrap();
        let st = attach_labels(e, &[0.0], 3);
        assert_eq!(st.label(4), &[0.0]);
        assert_eq!(st.len(), 5);
    }

    #[test]
    fn occupation_mass_matches_local_time() {
        let e = Excursion::new(vec![0.0, 1.0, 0.5, 1.5, 0.0], 4.0).unwrap();
        let st = attach_labels(e.clone(), &[0.0, 0.0], 1);
        let c = occupation_measure(&st, 0.8, 0.1);
        let lt = e.local_time_mass(0.8, 0.1, 1.0).occupation;
        assert!((c.total - lt).abs() <= 1e-12 * lt);
        let w: f64 = c.atoms().map(|(_, w)| w).sum();
        assert!((w - c.total).abs() < 1e-12);
        assert!(occupation_measure(&st, 2.0, 0.1).is_empty());
    }

    #[test]
    fn entropy_condition_families() {
        let q = entropy_condition_check(&BranchingMechanism::quadratic(1.0).unwrap());
        assert!(q.holds && q.integral.is_finite() && q.integral > 0.0);
        let s = entropy_condition_check(&BranchingMechanism::normalized_stable(1.5).unwrap());
        assert!(s.holds && s.integral > q.integral);
    }

    #[test]
    fn single_point_range_slope_zero() {
        let mut c = MeasureCloud::empty(1.0, 3);
        c.push(&[0.3, 0.1, 0.2], 1.0);
        let r = range_box_dimension(&[c], &[0.5, 0.25, 0.125]).unwrap();
        assert_eq!(r.slope, 0.0);
        assert!(range_box_dimension(&[MeasureCloud::empty(1.0, 3)], &[0.5, 0.25]).is_err());
    }

    #[test]
    fn cloud_ndjson_roundtrip() {
        let mut c = MeasureCloud::empty(0.5, 2);
        c.push(&[1.0, 2.0], 0.25);
        assert_eq!(c.total, 0.25);
        let line = c.to_ndjson();
        assert_eq!(line, r#"{"a":0.5,"atoms":[[1.0,2.0,0.25]]}"#);
        assert_eq!(MeasureCloud::from_ndjson(&line).unwrap(), c);
    }

    #[test]
    fn level_zero_is_initial_measure() {
        let m = BranchingMechanism::quadratic(1.0).unwrap();
        let mu = vec![(vec![0.0], 0.5), (vec![2.0], 0.25)];
        let s = assemble_superprocess(&m, &mu, &[0.0, 0.5], 50, SuperprocessOptions::default(), 4).unwrap();
        assert_eq!(s.levels[0].len(), 2);
        assert_eq!(s.levels[0].total, 0.75);
        assert!(s.intensity_bias.abs() < 0.2);
    }
}
