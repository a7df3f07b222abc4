//! Galton–Watson trees: offspring laws, Ulam–Harris trees in an arena,
//! plain, height-conditioned and spine samplers, contour functions, and the
//! generation-size process.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::coded_tree::Excursion;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Largest offspring count tabulated for the stable family.
pub const STABLE_TABLE_SIZE: usize = 1 << 20;
pub const DEFAULT_NODE_CAP: usize = 10_000_000;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OffspringFamily {
    /// `mu(k) = 2^{-k-1}`.
    GeometricCritical,
    /// Poisson with mean one.
    PoissonCritical,
    /// Generating function `s + (1 - s)^gamma / gamma`.
    StableGf { gamma: f64 },
    Explicit { pmf: Vec<f64> },
}

/// Survival tables `sf[k] = P(X >= k)` for the offspring law and its
/// size-biased version, with an optional power-law tail past the table.
#[derive(Debug)]
struct Tables {
    sf: Vec<f64>,
    sb_sf: Vec<f64>,
    // P(X >= k) ~ c k^{-tail} and P(X* >= k) ~ c' k^{-sb_tail} past the table
    tail: Option<(f64, f64)>,
}

impl Tables {
    fn stable(g: f64) -> Self {
        let k_max = STABLE_TABLE_SIZE;
        // |C(g-1, m)| and |C(g-2, m)| by their ratio recurrences
        let mut sf = vec![0.0; k_max + 2];
        let mut sb_sf = vec![0.0; k_max + 2];
        sf[0] = 1.0;
        sb_sf[0] = 1.0;
        sb_sf[1] = 1.0;
        let mut a = 1.0; // |C(g-1, k-1)|
        let mut b = 1.0; // |C(g-2, k-2)|
        for k in 1..=k_max + 1 {
            if k >= 2 {
                let m = (k - 1) as f64;
                a *= (m - g).abs() / m;
            }
            sf[k] = if k == 1 { (g - 1.0) / g } else { a / g };
            if k >= 2 {
                if k >= 3 {
                    let m = (k - 2) as f64;
                    b *= (m + 1.0 - g).abs() / m;
                }
                sb_sf[k] = b;
            }
        }
        Self { sf, sb_sf, tail: Some((g, g - 1.0)) }
    }

    fn explicit(pmf: &[f64], mean: f64) -> Self {
        let n = pmf.len();
        let mut sf = vec![0.0; n + 1];
        let mut sb_sf = vec![0.0; n + 1];
        for k in (0..n).rev() {
            sf[k] = sf[k + 1] + pmf[k];
            sb_sf[k] = sb_sf[k + 1] + if mean > 0.0 { k as f64 * pmf[k] / mean } else { 0.0 };
        }
        sf[0] = 1.0;
        if mean > 0.0 {
            sb_sf[0] = 1.0;
            sb_sf[1] = 1.0;
        }
        Self { sf, sb_sf, tail: None }
    }

    /// Smallest `k` with `P(X >= k + 1) <= t`, i.e. inversion at level `t`.
    fn invert(sf: &[f64], tail: Option<f64>, t: f64) -> u64 {
        let idx = sf.partition_point(|&s| s > t);
        let k = idx.max(1) - 1;
        match tail {
            Some(expo) if k == sf.len() - 1 => pareto_step(k as f64, sf[k], t, expo),
            _ => k as u64,
        }
    }

    /// A draw conditioned on `X >= k0`.
    fn draw_at_least(sf: &[f64], tail: Option<f64>, k0: u64, rng: &mut Rng) -> u64 {
        let u: f64 = rng.sample(Open01);
        if (k0 as usize) < sf.len() {
            let t = u * sf[k0 as usize];
            Self::invert(sf, tail, t).max(k0)
        } else {
            match tail {
                Some(expo) => pareto_step(k0 as f64, 1.0, u, expo).max(k0),
                None => k0,
            }
        }
    }
}

/// Inverts `P(X >= k) ≈ s0 (k / k0)^{-expo}` for `k >= k0` at level `t`.
fn pareto_step(k0: f64, s0: f64, t: f64, expo: f64) -> u64 {
    let k = k0 * (s0 / t).powf(1.0 / expo);
    if k >= 9.0e18 {
        u64::MAX / 4
    } else {
        k.floor().max(k0) as u64
    }
}

#[derive(Debug, Clone)]
pub struct OffspringDistribution {
    family: OffspringFamily,
    tables: Option<Arc<Tables>>,
    mean: f64,
    variance: f64,
}

impl PartialEq for OffspringDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl OffspringDistribution {
    pub fn new(family: OffspringFamily) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidOffspring(m));
        let (tables, mean, variance) = match &family {
            OffspringFamily::GeometricCritical => (None, 1.0, 2.0),
            OffspringFamily::PoissonCritical => (None, 1.0, 1.0),
            OffspringFamily::StableGf { gamma: g } => {
                if !(*g > 1.0 && *g < 2.0) {
                    return bad(format!("stable exponent {g} outside (1, 2)"));
                }
                (Some(Arc::new(Tables::stable(*g))), 1.0, f64::INFINITY)
            }
            OffspringFamily::Explicit { pmf } => {
                if pmf.is_empty() || pmf.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad("pmf entries must be finite and nonnegative".into());
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("pmf sums to {total}"));
                }
                let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                if mean > 1.0 + 1e-12 {
                    return bad(format!("mean {mean} exceeds one"));
                }
                if pmf.get(1).copied().unwrap_or(0.0) >= 1.0 {
                    return bad("mu(1) = 1 is degenerate".into());
                }
                let second: f64 = pmf.iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum();
                (Some(Arc::new(Tables::explicit(pmf, mean))), mean, second - mean * mean)
            }
        };
        Ok(Self { family, tables, mean, variance })
    }

    pub fn geometric() -> Self {
        Self::new(OffspringFamily::GeometricCritical).expect("valid family")
    }

    pub fn poisson() -> Self {
        Self::new(OffspringFamily::PoissonCritical).expect("valid family")
    }

    pub fn stable(gamma: f64) -> Result<Self> {
        Self::new(OffspringFamily::StableGf { gamma })
    }

    pub fn family(&self) -> &OffspringFamily {
        &self.family
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Variance; infinite for the stable family.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn pmf(&self, k: u64) -> f64 {
        match &self.family {
            OffspringFamily::GeometricCritical => 0.5f64.powi((k + 1).min(2000) as i32),
            OffspringFamily::PoissonCritical => (-1.0 - ln_gamma(k as f64 + 1.0)).exp(),
            OffspringFamily::StableGf { gamma: g } => match k {
                0 => 1.0 / g,
                1 => 0.0,
                _ => {
                    let k = k as f64;
                    (ln_gamma(k - g) - ln_gamma(k + 1.0) - gamma(-g).abs().ln()).exp() / g
                }
            },
            OffspringFamily::Explicit { pmf } => pmf.get(k as usize).copied().unwrap_or(0.0),
        }
    }

    /// Generating function `f(s) = E[s^X]`.
    pub fn pgf(&self, s: f64) -> f64 {
        match &self.family {
            OffspringFamily::GeometricCritical => 1.0 / (2.0 - s),
            OffspringFamily::PoissonCritical => (s - 1.0).exp(),
            OffspringFamily::StableGf { gamma: g } => s + (1.0 - s).powf(*g) / g,
            OffspringFamily::Explicit { pmf } => pmf.iter().rev().fold(0.0, |acc, p| acc * s + p),
        }
    }

    /// `1 - f(1 - x)`, evaluated without cancellation.
    pub fn one_minus_pgf_complement(&self, x: f64) -> f64 {
        match &self.family {
            OffspringFamily::GeometricCritical => x / (1.0 + x),
            OffspringFamily::PoissonCritical => -(-x).exp_m1(),
            OffspringFamily::StableGf { gamma: g } => x - x.powf(*g) / g,
            OffspringFamily::Explicit { pmf } => {
                let l = (-x).ln_1p();
                pmf.iter().enumerate().map(|(k, p)| p * -(k as f64 * l).exp_m1()).sum()
            }
        }
    }

    /// `x[m] = P(h(θ) >= m)` for `m = 0..=m_max`.
    pub fn height_tail(&self, m_max: u32) -> Vec<f64> {
        let mut x = Vec::with_capacity(m_max as usize + 1);
        x.push(1.0);
        for m in 0..m_max as usize {
            let next = self.one_minus_pgf_complement(x[m]);
            x.push(next);
        }
        x
    }

    pub fn sample(&self, rng: &mut Rng) -> u64 {
        match &self.family {
            OffspringFamily::GeometricCritical => geometric_half(rng),
            OffspringFamily::PoissonCritical => poisson(1.0, rng),
            _ => {
                let t = self.tables.as_ref().expect("tabulated family");
                Tables::invert(&t.sf, t.tail.map(|x| x.0), rng.sample(Open01))
            }
        }
    }

    /// A draw from the size-biased law `k mu(k) / mean`.
    pub fn sample_size_biased(&self, rng: &mut Rng) -> Result<u64> {
        if self.mean <= 0.0 {
            return Err(Error::InvalidOffspring("size-biased law needs a positive mean".into()));
        }
        Ok(match &self.family {
            OffspringFamily::GeometricCritical => 1 + geometric_half(rng) + geometric_half(rng),
            OffspringFamily::PoissonCritical => 1 + poisson(1.0, rng),
            _ => {
                let t = self.tables.as_ref().expect("tabulated family");
                Tables::invert(&t.sb_sf, t.tail.map(|x| x.1), rng.sample(Open01))
            }
        })
    }

    /// The sum of `z` independent offspring counts.
    pub fn sample_sum(&self, z: u64, rng: &mut Rng) -> u64 {
        if z == 0 {
            return 0;
        }
        match &self.family {
            OffspringFamily::GeometricCritical => {
                // negative binomial(z, 1/2) as a gamma mixture of Poissons
                let lambda = Gamma::new(z as f64, 1.0).expect("positive shape").sample(rng);
                poisson(lambda, rng)
            }
            OffspringFamily::PoissonCritical => poisson(z as f64, rng),
            _ => {
                let t = self.tables.as_ref().expect("tabulated family");
                multinomial_sum(&t.sf, t.tail.map(|x| x.0), z, rng)
            }
        }
    }
}

/// Sum of `z` iid draws by a sequential-binomial sweep over the table,
/// finishing with direct conditional draws once few individuals remain.
fn multinomial_sum(sf: &[f64], tail: Option<f64>, z: u64, rng: &mut Rng) -> u64 {
    let mut left = z;
    let mut total = 0u64;
    let mut k = 0usize;
    while left > 16 && k + 1 < sf.len() {
        let p = if sf[k] > 0.0 { ((sf[k] - sf[k + 1]) / sf[k]).clamp(0.0, 1.0) } else { 1.0 };
        let x = if p >= 1.0 { left } else { Binomial::new(left, p).expect("valid p").sample(rng) };
        total = total.saturating_add((k as u64).saturating_mul(x));
        left -= x;
        k += 1;
    }
    for _ in 0..left {
        total = total.saturating_add(Tables::draw_at_least(sf, tail, k as u64, rng));
    }
    total
}

fn geometric_half(rng: &mut Rng) -> u64 {
    let mut acc = 0u64;
    loop {
        let bits: u64 = rng.random();
        if bits != 0 {
            return acc + u64::from(bits.trailing_zeros());
        }
        acc += 64;
    }
}

fn poisson(lambda: f64, rng: &mut Rng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("finite rate").sample(rng) as u64
}

// ---------------------------------------------------------------------------
// Ulam–Harris trees

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Node {
    parent: u32,
    first_child: u32,
    next_sibling: u32,
    depth: u32,
}

/// A rooted ordered tree in a first-child / next-sibling arena. Node 0 is the
/// root and every parent index is smaller than its children's.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UlamTree {
    nodes: Vec<Node>,
    height: u32,
}

impl UlamTree {
    pub fn singleton() -> Self {
        Self { nodes: vec![Node { parent: NONE, first_child: NONE, next_sibling: NONE, depth: 0 }], height: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Maximal generation.
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        let p = self.nodes[v].parent;
        (p != NONE).then_some(p as usize)
    }

    pub fn depth(&self, v: usize) -> u32 {
        self.nodes[v].depth
    }

    pub fn children(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let mut c = self.nodes[v].first_child;
        std::iter::from_fn(move || {
            (c != NONE).then(|| {
                let out = c as usize;
                c = self.nodes[out].next_sibling;
                out
            })
        })
    }

    pub fn child_count(&self, v: usize) -> usize {
        self.children(v).count()
    }

    /// Number of vertices in each generation.
    pub fn generation_sizes(&self) -> Vec<u64> {
        let mut z = vec![0u64; self.height as usize + 1];
        for n in &self.nodes {
            z[n.depth as usize] += 1;
        }
        z
    }

    /// Height of the subtree rooted at each vertex.
    pub fn subtree_heights(&self) -> Vec<u32> {
        let mut h = vec![0u32; self.nodes.len()];
        for v in (1..self.nodes.len()).rev() {
            let p = self.nodes[v].parent as usize;
            h[p] = h[p].max(h[v] + 1);
        }
        h
    }

    /// Graph distance between two vertices.
    pub fn graph_distance(&self, mut u: usize, mut v: usize) -> u32 {
        let mut d = 0;
        while u != v {
            if self.nodes[u].depth >= self.nodes[v].depth {
                u = self.nodes[u].parent as usize;
            } else {
                v = self.nodes[v].parent as usize;
            }
            d += 1;
        }
        d
    }

    /// Depth-first contour at unit speed: `2 * edges + 1` values.
    pub fn contour(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(2 * self.edges() + 1);
        self.walk_contour(|_, d| out.push(d));
        out
    }

    /// First contour time at which each vertex is visited.
    pub fn first_visit_times(&self) -> Vec<usize> {
        let mut first = vec![usize::MAX; self.nodes.len()];
        let mut t = 0;
        self.walk_contour(|v, _| {
            if first[v] == usize::MAX {
                first[v] = t;
            }
            t += 1;
        });
        first
    }

    /// Calls `visit(vertex, depth)` at each contour step.
    fn walk_contour<F: FnMut(usize, u32)>(&self, mut visit: F) {
        let mut stack: Vec<(usize, u32)> = vec![(0, self.nodes[0].first_child)];
        visit(0, 0);
        while let Some(top) = stack.last_mut() {
            let c = top.1;
            if c != NONE {
                top.1 = self.nodes[c as usize].next_sibling;
                stack.push((c as usize, self.nodes[c as usize].first_child));
                visit(c as usize, self.nodes[c as usize].depth);
            } else {
                stack.pop();
                if let Some(&(v, _)) = stack.last() {
                    visit(v, self.nodes[v].depth);
                }
            }
        }
    }

    pub fn to_excursion(&self, height_scale: f64, time_scale: f64) -> Result<Excursion> {
        Excursion::from_contour(&self.contour(), height_scale, time_scale)
    }

    /// Rebuilds a tree from a contour sequence (steps of ±1 from 0 to 0).
    pub fn from_contour(contour: &[u32]) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidExcursion(m.to_string()));
        if contour.first() != Some(&0) || contour.last() != Some(&0) {
            return bad("contour must start and end at 0");
        }
        let mut b = ArenaBuilder::new();
        // stack of (node, last child)
        let mut stack: Vec<(u32, u32)> = vec![(0, NONE)];
        for w in contour.windows(2) {
            if w[1] == w[0] + 1 {
                let &(v, last) = stack.last().expect("nonempty");
                let c = b.push_child(v, last);
                stack.last_mut().expect("nonempty").1 = c;
                stack.push((c, NONE));
            } else if w[1] + 1 == w[0] {
                stack.pop();
                if stack.is_empty() {
                    return bad("contour goes below zero");
                }
            } else {
                return bad("contour steps must be +1 or -1");
            }
        }
        Ok(b.finish())
    }

    /// `node,parent` rows; the root's parent is empty.
    pub fn write_parent_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node", "parent"])?;
        for (i, n) in self.nodes.iter().enumerate() {
            let parent = if n.parent == NONE { String::new() } else { n.parent.to_string() };
            out.write_record([i.to_string(), parent])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_parent_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut b = ArenaBuilder::new();
        let mut last_child: Vec<u32> = vec![NONE];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let node: usize = rec.get(0).unwrap_or("").trim().parse().map_err(|_| Error::Format("bad node id".into()))?;
            if node != i {
                return Err(Error::Format(format!("node ids must be 0..n in order, got {node} at row {i}")));
            }
            let parent = rec.get(1).unwrap_or("").trim();
            if i == 0 {
                if !parent.is_empty() {
                    return Err(Error::Format("node 0 must be the root".into()));
                }
                continue;
            }
            let p: u32 = parent.parse().map_err(|_| Error::Format(format!("bad parent {parent:?}")))?;
            if p as usize >= i {
                return Err(Error::Format(format!("parent {p} of node {i} must precede it")));
            }
            let c = b.push_child(p, last_child[p as usize]);
            last_child[p as usize] = c;
            last_child.push(NONE);
        }
        Ok(b.finish())
    }

    pub fn to_contour_ndjson(&self) -> String {
        serde_json::to_string(&ContourRecord { contour: self.contour() }).expect("integers serialize")
    }

    pub fn from_contour_ndjson(line: &str) -> Result<Self> {
        let rec: ContourRecord = serde_json::from_str(line)?;
        Self::from_contour(&rec.contour)
    }
}

#[derive(Serialize, Deserialize)]
struct ContourRecord {
    contour: Vec<u32>,
}

struct ArenaBuilder {
    nodes: Vec<Node>,
    height: u32,
}

impl ArenaBuilder {
    fn new() -> Self {
        let t = UlamTree::singleton();
        Self { nodes: t.nodes, height: 0 }
    }

    fn push_child(&mut self, parent: u32, prev_sibling: u32) -> u32 {
        let id = self.nodes.len() as u32;
        let depth = self.nodes[parent as usize].depth + 1;
        self.nodes.push(Node { parent, first_child: NONE, next_sibling: NONE, depth });
        if prev_sibling == NONE {
            self.nodes[parent as usize].first_child = id;
        } else {
            self.nodes[prev_sibling as usize].next_sibling = id;
        }
        self.height = self.height.max(depth);
        id
    }

    /// Appends `k` consecutive children of a childless `parent`.
    fn push_children(&mut self, parent: u32, k: usize) -> u32 {
        let first = self.nodes.len() as u32;
        if k == 0 {
            return first;
        }
        let depth = self.nodes[parent as usize].depth + 1;
        for i in 0..k as u32 {
            let next = if i + 1 < k as u32 { first + i + 1 } else { NONE };
            self.nodes.push(Node { parent, first_child: NONE, next_sibling: next, depth });
        }
        self.nodes[parent as usize].first_child = first;
        self.height = self.height.max(depth);
        first
    }

    fn finish(self) -> UlamTree {
        UlamTree { nodes: self.nodes, height: self.height }
    }
}

// ---------------------------------------------------------------------------
// Growth under subtree-height constraints

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Constraint {
    Free,
    /// Subtree height at least `m`.
    AtLeast(u32),
    /// Subtree height strictly below `m`.
    Below(u32),
    /// On the distinguished ancestral line, `m` generations above the tip.
    Spine(u32),
}

struct Grower<'a> {
    off: &'a OffspringDistribution,
    // x[m] = P(h >= m)
    tail: Vec<f64>,
    b: ArenaBuilder,
    node_cap: usize,
    depth_cap: u32,
    spine: Vec<u32>,
    frontier: Vec<(u32, Constraint)>,
}

impl<'a> Grower<'a> {
    fn new(off: &'a OffspringDistribution, tail_len: u32, node_cap: usize, depth_cap: u32) -> Self {
        Self {
            off,
            tail: off.height_tail(tail_len),
            b: ArenaBuilder::new(),
            node_cap,
            depth_cap,
            spine: Vec::new(),
            frontier: Vec::new(),
        }
    }

    fn offspring(&self, c: Constraint, rng: &mut Rng) -> Result<u64> {
        Ok(match c {
            Constraint::Free => self.off.sample(rng),
            Constraint::Spine(m) if m > 0 => self.off.sample_size_biased(rng)?,
            Constraint::Spine(_) => self.off.sample(rng),
            Constraint::Below(m) => {
                if m <= 1 {
                    return Ok(0);
                }
                let w = 1.0 - self.tail[m as usize - 1];
                loop {
                    let k = self.off.sample(rng);
                    if k == 0 || rng.random::<f64>() < w.powf(k as f64) {
                        break k;
                    }
                }
            }
            Constraint::AtLeast(0) => self.off.sample(rng),
            Constraint::AtLeast(m) => {
                let q = self.tail[m as usize - 1];
                loop {
                    let k = self.off.sample_size_biased(rng)?;
                    let hit = -(k as f64 * (-q).ln_1p()).exp_m1();
                    if rng.random::<f64>() * k as f64 * q < hit {
                        break k;
                    }
                }
            }
        })
    }

    /// Index (0-based) of the first child whose subtree reaches height
    /// `m - 1`, given that at least one of `k` children does.
    fn first_survivor(q: f64, k: u64, rng: &mut Rng) -> u64 {
        if q >= 1.0 {
            return 0;
        }
        let l = (-q).ln_1p();
        let all_fail = (k as f64 * l).exp();
        let u: f64 = rng.random();
        let j = ((1.0 - u * (1.0 - all_fail)).ln() / l).floor();
        (j.max(0.0) as u64).min(k - 1)
    }

    fn grow(&mut self, mut stack: Vec<(u32, Constraint)>, rng: &mut Rng) -> Result<()> {
        while let Some((v, c)) = stack.pop() {
            if self.b.nodes[v as usize].depth >= self.depth_cap {
                self.frontier.push((v, c));
                continue;
            }
            let k = self.offspring(c, rng)?;
            if k == 0 {
                continue;
            }
            if self.b.nodes.len() as u64 + k > self.node_cap as u64 {
                return Err(Error::Truncated(self.node_cap));
            }
            let first = self.b.push_children(v, k as usize);
            let child = |i: u64| first + i as u32;
            match c {
                Constraint::Free | Constraint::AtLeast(0) | Constraint::Spine(0) => {
                    stack.extend((0..k).rev().map(|i| (child(i), Constraint::Free)));
                }
                Constraint::Below(m) => {
                    stack.extend((0..k).rev().map(|i| (child(i), Constraint::Below(m - 1))));
                }
                Constraint::AtLeast(m) => {
                    let j = Self::first_survivor(self.tail[m as usize - 1], k, rng);
                    for i in (0..k).rev() {
                        let ci = match i.cmp(&j) {
                            std::cmp::Ordering::Less => Constraint::Below(m - 1),
                            std::cmp::Ordering::Equal => Constraint::AtLeast(m - 1),
                            std::cmp::Ordering::Greater => Constraint::Free,
                        };
                        stack.push((child(i), ci));
                    }
                }
                Constraint::Spine(m) => {
                    let j = rng.random_range(0..k);
                    self.spine.push(child(j));
                    for i in (0..k).rev() {
                        let ci = if i == j { Constraint::Spine(m - 1) } else { Constraint::Free };
                        stack.push((child(i), ci));
                    }
                }
            }
        }
        Ok(())
    }

    /// Grows all frontier vertices further, up to a new depth cap.
    fn extend(&mut self, depth_cap: u32, rng: &mut Rng) -> Result<()> {
        self.depth_cap = depth_cap;
        let mut pending = std::mem::take(&mut self.frontier);
        pending.reverse();
        self.grow(pending, rng)
    }
}

/// Limits applied while growing a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowOptions {
    pub node_cap: usize,
    /// Vertices at this generation get no children.
    pub depth_cap: Option<u32>,
}

impl Default for GrowOptions {
    fn default() -> Self {
        Self { node_cap: DEFAULT_NODE_CAP, depth_cap: None }
    }
}

impl GrowOptions {
    fn depth(&self) -> u32 {
        self.depth_cap.unwrap_or(u32::MAX)
    }
}

/// An unconditioned tree; `Err(Truncated)` if the node cap is hit.
pub fn sample_tree(off: &OffspringDistribution, opts: GrowOptions, rng: &mut Rng) -> Result<UlamTree> {
    let mut g = Grower::new(off, 0, opts.node_cap, opts.depth());
    g.grow(vec![(0, Constraint::Free)], rng)?;
    Ok(g.b.finish())
}

/// A tree conditioned on `h >= n`, with the number of proposals it took.
#[derive(Debug, Clone)]
pub struct Conditioned {
    pub tree: UlamTree,
    pub attempts: u64,
}

/// Samplers of `Π_μ(· | h >= n)`, selected by name.
pub trait ConditionedSampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn sample(
        &self,
        off: &OffspringDistribution,
        n: u32,
        opts: GrowOptions,
        max_attempts: u64,
        rng: &mut Rng,
    ) -> Result<Conditioned>;
}

/// Proposes unconditioned trees until one reaches generation `n`. Each
/// proposal is first grown only to generation `n`; accepted proposals are
/// then grown to completion.
pub struct RejectionSampler;

impl ConditionedSampler for RejectionSampler {
    fn name(&self) -> &'static str {
        "rejection"
    }

    fn sample(
        &self,
        off: &OffspringDistribution,
        n: u32,
        opts: GrowOptions,
        max_attempts: u64,
        rng: &mut Rng,
    ) -> Result<Conditioned> {
        if opts.depth() < n {
            return Err(Error::Unsupported(format!("depth cap below conditioning height {n}")));
        }
        for attempt in 1..=max_attempts {
            let mut g = Grower::new(off, 0, opts.node_cap, n);
            match g.grow(vec![(0, Constraint::Free)], rng) {
                Ok(()) => {}
                Err(Error::Truncated(_)) => continue,
                Err(e) => return Err(e),
            }
            if g.b.height < n {
                continue;
            }
            match g.extend(opts.depth(), rng) {
                Ok(()) => return Ok(Conditioned { tree: g.b.finish(), attempts: attempt }),
                Err(Error::Truncated(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::AttemptsExhausted { attempts: max_attempts, acceptance: 0.0 })
    }
}

/// Grows the conditioned tree directly: the root is constrained to have
/// height at least `n`, which propagates to one surviving child per
/// generation, with the earlier siblings constrained to die out in time.
pub struct ExactSampler;

impl ConditionedSampler for ExactSampler {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn sample(
        &self,
        off: &OffspringDistribution,
        n: u32,
        opts: GrowOptions,
        max_attempts: u64,
        rng: &mut Rng,
    ) -> Result<Conditioned> {
        if off.tail_vanishes() {
            return Err(Error::Degenerate("no offspring: conditioning event is empty".into()));
        }
        for attempt in 1..=max_attempts {
            let mut g = Grower::new(off, n, opts.node_cap, opts.depth());
            match g.grow(vec![(0, Constraint::AtLeast(n))], rng) {
                Ok(()) => return Ok(Conditioned { tree: g.b.finish(), attempts: attempt }),
                Err(Error::Truncated(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::AttemptsExhausted { attempts: max_attempts, acceptance: 0.0 })
    }
}

/// Geometric(1/2) trees through their contour: draw the total size from its
/// exact law, then a uniform Dyck path by the cycle lemma; reject on height.
pub struct CycleRotationSampler;

impl CycleRotationSampler {
    /// `P(|θ| >= N) = C(2N-2, N-1) / 4^{N-1}` for the geometric(1/2) law.
    fn size_tail(n: u64) -> f64 {
        if n <= 1 {
            return 1.0;
        }
        let j = (n - 1) as f64;
        (ln_gamma(2.0 * j + 1.0) - 2.0 * ln_gamma(j + 1.0) - j * 4f64.ln()).exp()
    }

    fn sample_size(rng: &mut Rng) -> u64 {
        let u: f64 = rng.sample(Open01);
        // N = max{N : P(|θ| >= N) >= u}; start from the asymptote 1 + 1/(π u²).
        let guess = 1.0 + 1.0 / (std::f64::consts::PI * u * u);
        let mut n = if guess > 4e18 { 4_000_000_000_000_000_000 } else { guess.floor().max(1.0) as u64 };
        while n > 1 && Self::size_tail(n) < u {
            n -= 1;
        }
        while Self::size_tail(n + 1) >= u {
            n += 1;
        }
        n
    }

    /// Uniform Dyck path with `n - 1` up steps, as a contour.
    fn dyck_contour(n: u64, rng: &mut Rng) -> Vec<u32> {
        use rand::seq::SliceRandom;
        let ups = (n - 1) as usize;
        let mut steps: Vec<i8> = vec![1; ups];
        steps.extend(std::iter::repeat_n(-1, ups + 1));
        steps.shuffle(rng);
        // rotate to start right after the first minimum of the partial sums
        let (mut s, mut min, mut arg) = (0i64, 0i64, 0usize);
        for (i, &x) in steps.iter().enumerate() {
            s += i64::from(x);
            if s < min {
                min = s;
                arg = i + 1;
            }
        }
        let len = steps.len();
        steps.rotate_left(arg % len);
        let mut out = Vec::with_capacity(2 * ups + 1);
        let mut h = 0i64;
        out.push(0);
        for &x in &steps[..2 * ups] {
            h += i64::from(x);
            out.push(h as u32);
        }
        out
    }
}

impl ConditionedSampler for CycleRotationSampler {
    fn name(&self) -> &'static str {
        "cycle-rotation"
    }

    fn sample(
        &self,
        off: &OffspringDistribution,
        n: u32,
        opts: GrowOptions,
        max_attempts: u64,
        rng: &mut Rng,
    ) -> Result<Conditioned> {
        if off.family() != &OffspringFamily::GeometricCritical {
            return Err(Error::Unsupported("cycle-rotation needs the geometric(1/2) family".into()));
        }
        if opts.depth_cap.is_some() {
            return Err(Error::Unsupported("cycle-rotation does not support depth caps".into()));
        }
        for attempt in 1..=max_attempts {
            let size = Self::sample_size(rng);
            if size <= u64::from(n) || size > opts.node_cap as u64 {
                continue;
            }
            let contour = Self::dyck_contour(size, rng);
            if contour.iter().copied().max().unwrap_or(0) >= n {
                return Ok(Conditioned { tree: UlamTree::from_contour(&contour)?, attempts: attempt });
            }
        }
        Err(Error::AttemptsExhausted { attempts: max_attempts, acceptance: 0.0 })
    }
}

impl OffspringDistribution {
    fn tail_vanishes(&self) -> bool {
        self.pmf(0) >= 1.0
    }
}

/// Name-indexed set of conditioned samplers.
pub struct SamplerRegistry {
    samplers: BTreeMap<&'static str, Box<dyn ConditionedSampler>>,
}

impl SamplerRegistry {
    pub fn empty() -> Self {
        Self { samplers: BTreeMap::new() }
    }

    pub fn register(&mut self, s: Box<dyn ConditionedSampler>) {
        self.samplers.insert(s.name(), s);
    }

    pub fn get(&self, name: &str) -> Result<&dyn ConditionedSampler> {
        self.samplers
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::Unsupported(format!("unknown sampler {name:?}; known: {:?}", self.names())))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.samplers.keys().copied().collect()
    }
}

impl Default for SamplerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(RejectionSampler));
        r.register(Box::new(ExactSampler));
        r.register(Box::new(CycleRotationSampler));
        r
    }
}

/// Rejection sampling of `Π_μ(· | h >= n)`; reports the observed acceptance
/// rate when the budget runs out.
pub fn sample_conditioned_height(
    off: &OffspringDistribution,
    n: u32,
    rng: &mut Rng,
    max_attempts: u64,
) -> Result<UlamTree> {
    let opts = GrowOptions::default();
    match RejectionSampler.sample(off, n, opts, max_attempts, rng) {
        Ok(c) => Ok(c.tree),
        Err(Error::AttemptsExhausted { attempts, .. }) => Err(Error::AttemptsExhausted { attempts, acceptance: 0.0 }),
        Err(e) => Err(e),
    }
}

/// Fraction of unconditioned trees reaching generation `n`, over `attempts`
/// proposals grown only to that generation.
pub fn height_acceptance_rate(off: &OffspringDistribution, n: u32, attempts: u64, rng: &mut Rng) -> Result<f64> {
    let mut hits = 0u64;
    for _ in 0..attempts {
        let mut g = Grower::new(off, 0, DEFAULT_NODE_CAP, n);
        g.grow(vec![(0, Constraint::Free)], rng)?;
        hits += u64::from(g.b.height >= n);
    }
    Ok(hits as f64 / attempts as f64)
}

/// A tree with a distinguished ancestral line from the root to generation `n`.
#[derive(Debug, Clone)]
pub struct SpineTree {
    pub tree: UlamTree,
    /// Node indices of the spine, from the root to the tip at generation `n`.
    pub spine: Vec<usize>,
}

impl SpineTree {
    pub fn tip(&self) -> usize {
        *self.spine.last().expect("spine contains the root")
    }
}

/// Size-biased (Kesten) tree: spine vertices below generation `n` get
/// size-biased offspring and one uniformly chosen child continues the spine.
/// The tip and all off-spine vertices reproduce according to `mu`.
pub fn spine_sample(off: &OffspringDistribution, n: u32, opts: GrowOptions, rng: &mut Rng) -> Result<SpineTree> {
    if opts.depth() < n {
        return Err(Error::Unsupported(format!("depth cap below spine length {n}")));
    }
    let mut g = Grower::new(off, 0, opts.node_cap, opts.depth());
    g.grow(vec![(0, Constraint::Spine(n))], rng)?;
    let mut spine: Vec<usize> = std::iter::once(0).chain(g.spine.iter().map(|&v| v as usize)).collect();
    spine.truncate(n as usize + 1);
    Ok(SpineTree { tree: g.b.finish(), spine })
}

/// Generation sizes `Z_0 = z0, Z_1, ..., Z_{max_gen}` of the Galton–Watson
/// process, stopping early at extinction.
pub fn generation_process(off: &OffspringDistribution, z0: u64, max_gen: u32, rng: &mut Rng) -> Vec<u64> {
    let mut z = vec![z0];
    let mut cur = z0;
    for _ in 0..max_gen {
        if cur == 0 {
            break;
        }
        cur = off.sample_sum(cur, rng);
        z.push(cur);
    }
    z
}

/// Extinction generation of a process started from `z0` individuals, or
/// `None` if still alive at `max_gen`. This equals the height of the forest.
pub fn extinction_time(off: &OffspringDistribution, z0: u64, max_gen: u32, rng: &mut Rng) -> Option<u32> {
    let mut cur = z0;
    for gen in 0..=max_gen {
        if cur == 0 {
            return Some(gen.saturating_sub(1));
        }
        if gen == max_gen {
            return None;
        }
        cur = off.sample_sum(cur, rng);
    }
    None
}
