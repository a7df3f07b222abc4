//! Gromov–Hausdorff distances between rooted trees: exact enumeration on
//! tiny finite trees, the coding upper bound, and the diameter lower bound.

use std::io::{Read, Write};

use crate::coded_tree::Excursion;
use crate::error::{Error, Result};

pub const DEFAULT_GH_CAP: usize = 6;

/// A finite rooted metric space, stored as a dense distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMetricTree {
    n: usize,
    dmat: Vec<f64>,
    root: usize,
}

impl FiniteMetricTree {
    /// Checks shape, symmetry, zero diagonal and nonnegativity. Use
    /// [`check_tree_axioms`](Self::check_tree_axioms) for the triangle and
    /// four-point conditions.
    pub fn new(rows: Vec<Vec<f64>>, root: usize) -> Result<Self> {
        let n = rows.len();
        let bad = |m: String| Err(Error::InvalidMetricTree(m));
        if n == 0 {
            return bad("empty point set".into());
        }
        if root >= n {
            return bad(format!("root {root} out of range"));
        }
        if rows.iter().any(|r| r.len() != n) {
            return bad("distance matrix is not square".into());
        }
        let dmat: Vec<f64> = rows.into_iter().flatten().collect();
        for i in 0..n {
            if dmat[i * n + i] != 0.0 {
                return bad(format!("nonzero diagonal at {i}"));
            }
            for j in 0..n {
                let d = dmat[i * n + j];
                if !(d.is_finite() && d >= 0.0) {
                    return bad(format!("bad distance {d} at ({i},{j})"));
                }
                if (d - dmat[j * n + i]).abs() > 1e-10 {
                    return bad(format!("asymmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self { n, dmat, root })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dmat[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.dmat[i * self.n..(i + 1) * self.n]
    }

    pub fn diameter(&self) -> f64 {
        self.dmat.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies every distance by `r`.
    pub fn scaled(&self, r: f64) -> Self {
        Self { n: self.n, dmat: self.dmat.iter().map(|d| d * r).collect(), root: self.root }
    }

    /// Triangle inequality and the four-point condition, within `tol`.
    pub fn check_tree_axioms(&self, tol: f64) -> Result<()> {
        let n = self.n;
        let d = |i, j| self.d(i, j);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if d(i, j) > d(i, k) + d(k, j) + tol {
                        return Err(Error::InvalidMetricTree(format!("triangle fails at ({i},{j},{k})")));
                    }
                }
            }
        }
        for w in 0..n {
            for x in 0..n {
                for y in 0..n {
                    for z in 0..n {
                        let lhs = d(w, x) + d(y, z);
                        let rhs = (d(w, y) + d(x, z)).max(d(w, z) + d(x, y));
                        if lhs > rhs + tol {
                            return Err(Error::InvalidMetricTree(format!("four-point fails at ({w},{x},{y},{z})")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV distance matrix; the header names each column `p<i>` except the
    /// root column, which is named `root`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<String> =
            (0..self.n).map(|i| if i == self.root { "root".to_string() } else { format!("p{i}") }).collect();
        out.write_record(&header)?;
        for i in 0..self.n {
            out.write_record(self.row(i).iter().map(|d| d.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let root = header
            .iter()
            .position(|h| h.trim() == "root")
            .ok_or_else(|| Error::Format("no column named root".into()))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(format!("bad distance {f:?}: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(rows, root)
    }
}

/// A relation between the points of two finite trees, including the root pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correspondence {
    pub pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    pub fn new(pairs: Vec<(usize, usize)>, a: &FiniteMetricTree, b: &FiniteMetricTree) -> Result<Self> {
        let mut left = vec![false; a.len()];
        let mut right = vec![false; b.len()];
        for &(i, j) in &pairs {
            if i >= a.len() || j >= b.len() {
                return Err(Error::InvalidMetricTree(format!("pair ({i},{j}) out of range")));
            }
            left[i] = true;
            right[j] = true;
        }
        if !left.iter().all(|&x| x) || !right.iter().all(|&x| x) {
            return Err(Error::InvalidMetricTree("correspondence is not surjective".into()));
        }
        if !pairs.contains(&(a.root(), b.root())) {
            return Err(Error::InvalidMetricTree("correspondence misses the root pair".into()));
        }
        Ok(Self { pairs })
    }
}

/// `sup |d_A(a, a') - d_B(b, b')|` over pairs of related pairs.
pub fn distortion(c: &Correspondence, a: &FiniteMetricTree, b: &FiniteMetricTree) -> f64 {
    let mut worst: f64 = 0.0;
    for &(i, j) in &c.pairs {
        for &(k, l) in &c.pairs {
            worst = worst.max((a.d(i, k) - b.d(j, l)).abs());
        }
    }
    worst
}

/// Subsamples the coded tree at the given times; `times[0]` must be 0.
pub fn subsample(e: &Excursion, times: &[f64]) -> Result<FiniteMetricTree> {
    if times.first() != Some(&0.0) {
        return Err(Error::InvalidMetricTree("first sample time must be the root time 0".into()));
    }
    let rows = times
        .iter()
        .map(|&s| times.iter().map(|&t| e.dist(s, t)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    FiniteMetricTree::new(rows, 0)
}

/// Exact root-preserving Gromov–Hausdorff distance, `1/2 min dis(R)`.
///
/// Searches relations `graph(f) ∪ graph(h)^{-1}` with `f: A -> B`,
/// `h: B -> A` fixing the roots, by branch and bound.
pub fn gh_exact(a: &FiniteMetricTree, b: &FiniteMetricTree, cap: usize) -> Result<f64> {
    if a.len() > cap || b.len() > cap {
        return Err(Error::TooLarge(a.len().max(b.len()), cap));
    }
    // Points to assign: non-root points of A (choosing an image), then of B.
    let mut slots: Vec<Slot> = Vec::new();
    slots.extend((0..a.len()).filter(|&i| i != a.root()).map(Slot::A));
    slots.extend((0..b.len()).filter(|&j| j != b.root()).map(Slot::B));
    let mut search = Search {
        a,
        b,
        slots,
        chosen: vec![(a.root(), b.root())],
        best: a.diameter().max(b.diameter()),
    };
    search.dfs(0, 0.0);
    Ok(search.best / 2.0)
}

#[derive(Clone, Copy)]
enum Slot {
    A(usize),
    B(usize),
}

struct Search<'a> {
    a: &'a FiniteMetricTree,
    b: &'a FiniteMetricTree,
    slots: Vec<Slot>,
    chosen: Vec<(usize, usize)>,
    best: f64,
}

impl Search<'_> {
    fn dfs(&mut self, depth: usize, current: f64) {
        if current >= self.best {
            return;
        }
        if depth == self.slots.len() {
            self.best = current;
            return;
        }
        let options = match self.slots[depth] {
            Slot::A(_) => self.b.len(),
            Slot::B(_) => self.a.len(),
        };
        for o in 0..options {
            let pair = match self.slots[depth] {
                Slot::A(i) => (i, o),
                Slot::B(j) => (o, j),
            };
            let mut worst = current;
            for &(k, l) in &self.chosen {
                worst = worst.max((self.a.d(pair.0, k) - self.b.d(pair.1, l)).abs());
                if worst >= self.best {
                    break;
                }
            }
            if worst < self.best {
                self.chosen.push(pair);
                self.dfs(depth + 1, worst);
                self.chosen.pop();
            }
        }
    }
}

/// `2 sup |g1 - g2|`, with the shorter excursion extended by zero.
///
/// Both functions are piecewise linear, so the sup is attained on the union
/// of their grid times.
pub fn gh_upper_coding(g1: &Excursion, g2: &Excursion) -> f64 {
    let zeta = g1.zeta().max(g2.zeta());
    let at = |e: &Excursion, t: f64| if t <= e.zeta() { e.value(t) } else { 0.0 };
    let mut sup: f64 = 0.0;
    for e in [g1, g2] {
        for i in 0..=e.steps() {
            let t = e.time_of(i);
            sup = sup.max((at(g1, t) - at(g2, t)).abs());
        }
    }
    sup = sup.max((at(g1, zeta) - at(g2, zeta)).abs());
    2.0 * sup
}

/// `|diam A - diam B| / 2`.
pub fn gh_lower_diam(a: &FiniteMetricTree, b: &FiniteMetricTree) -> f64 {
    (a.diameter() - b.diameter()).abs() / 2.0
}
