//! The R-tree coded by a nonnegative excursion `g` on `[0, zeta]`:
//! `d(s,t) = g(s) + g(t) - 2 min_{[s∧t, s∨t]} g`.
//!
//! An [`Excursion`] stores `g` on a grid, uniform unless explicit knot times
//! are given, and is linearly interpolated between grid nodes. All level-set operations (crossings, occupation times,
//! components above a level) are solved exactly on the linear segments.

use std::io::{Read, Write};
use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmq::SparseMin;
use crate::rng::Rng;

/// Relative slack used when comparing grid values against a level.
const LEVEL_SNAP: f64 = 1e-12;

fn snap(level: f64) -> f64 {
    LEVEL_SNAP * level.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct Excursion {
    heights: Vec<f64>,
    zeta: f64,
    dt: f64,
    /// Knot times when the grid is not uniform.
    times: Option<Vec<f64>>,
    rmq: OnceLock<SparseMin>,
}

impl PartialEq for Excursion {
    fn eq(&self, other: &Self) -> bool {
        self.zeta == other.zeta && self.heights == other.heights && self.times == other.times
    }
}

/// A vertex of the coded tree, represented by one of its times.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TreePoint(pub f64);

/// One connected component of `{t : g(t) > level}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelComponent {
    pub start: f64,
    pub end: f64,
    /// Height of the subtree above the level: `max g - level` on the component.
    pub peak: f64,
}

impl LevelComponent {
    pub fn root_time(&self) -> f64 {
        self.start
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelDecomposition {
    pub level: f64,
    pub components: Vec<LevelComponent>,
}

impl LevelDecomposition {
    /// The shifted sub-excursions `g((start + s) ∧ end) - level`.
    pub fn sub_excursions(&self, e: &Excursion) -> Vec<Excursion> {
        self.components
            .iter()
            .map(|c| e.window_excursion(c.start, c.end, self.level, false))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeEstimate {
    /// `Z(a - eps, eps) / v(eps)`.
    pub counting: f64,
    /// `Leb{t : a - eps < g(t) <= a} / eps`.
    pub occupation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplicity {
    Finite(u32),
    /// Degree above the configured cap.
    Infinite,
}

pub const DEFAULT_MULTIPLICITY_CAP: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Explored forward in time from the distinguished vertex.
    Forward,
    /// Explored backward in time.
    Backward,
}

/// A subtree grafted on the ancestral line of a vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncestralSubtree {
    /// Distance from the root to the graft point.
    pub level: f64,
    /// Height of the subtree.
    pub peak: f64,
    /// Interval on the original time axis (always `start <= end`).
    pub start: f64,
    pub end: f64,
    pub side: Side,
}

impl AncestralSubtree {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

impl Excursion {
    pub fn new(heights: Vec<f64>, zeta: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidExcursion(m));
        if heights.len() < 2 {
            return bad("need at least two grid values".into());
        }
        if !(zeta.is_finite() && zeta > 0.0) {
            return bad(format!("duration {zeta} must be positive"));
        }
        if heights[0] != 0.0 || *heights.last().expect("len >= 2") != 0.0 {
            return bad("endpoints must be zero".into());
        }
        if let Some(h) = heights.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return bad(format!("height {h} is not a finite nonnegative number"));
        }
        let dt = zeta / (heights.len() - 1) as f64;
        Ok(Self { heights, zeta, dt, times: None, rmq: OnceLock::new() })
    }

    /// An excursion with explicit, strictly increasing knot times from 0 to
    /// `zeta`.
    pub fn with_times(heights: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        if times.len() != heights.len() {
            return Err(Error::InvalidExcursion("times and heights differ in length".into()));
        }
        if times.first() != Some(&0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidExcursion("knot times must increase strictly from 0".into()));
        }
        let zeta = *times.last().expect("checked length");
        let mut e = Self::new(heights, zeta)?;
        e.times = Some(times);
        Ok(e)
    }

    /// Knot times, or `None` on a uniform grid.
    pub fn knot_times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    /// Builds from integer contour values with the given scales.
    pub fn from_contour(contour: &[u32], height_scale: f64, time_scale: f64) -> Result<Self> {
        if contour.len() == 1 {
            // A single vertex: code it by a single zero-height step.
            return Self::new(vec![0.0, 0.0], time_scale);
        }
        let mut heights: Vec<f64> = contour.iter().map(|&c| c as f64 * height_scale).collect();
        heights[0] = 0.0;
        *heights.last_mut().expect("nonempty") = 0.0;
        Self::new(heights, time_scale * (contour.len() - 1) as f64)
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn steps(&self) -> usize {
        self.heights.len() - 1
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time_of(&self, index: usize) -> f64 {
        if let Some(ts) = &self.times {
            return ts[index];
        }
        if index == self.steps() {
            self.zeta
        } else {
            index as f64 * self.dt
        }
    }

    fn rmq(&self) -> &SparseMin {
        self.rmq.get_or_init(|| SparseMin::new(&self.heights))
    }

    fn check(&self, t: f64) -> Result<()> {
        if (0.0..=self.zeta).contains(&t) {
            Ok(())
        } else {
            Err(Error::OutOfRange { time: t, zeta: self.zeta })
        }
    }

    /// Segment index `i` and fraction in `[0, 1]` of `t` within it.
    fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.steps();
        if let Some(ts) = &self.times {
            let i = ts.partition_point(|&x| x <= t).saturating_sub(1).min(m - 1);
            return (i, ((t - ts[i]) / (ts[i + 1] - ts[i])).clamp(0.0, 1.0));
        }
        let x = t / self.dt;
        let i = (x.floor() as usize).min(m - 1);
        let frac = (x - i as f64).clamp(0.0, 1.0);
        (i, frac)
    }

    /// Interpolated value `g(t)`; `t` is clamped into `[0, zeta]`.
    pub fn value(&self, t: f64) -> f64 {
        let (i, f) = self.locate(t.clamp(0.0, self.zeta));
        if f == 0.0 {
            return self.heights[i];
        }
        if f == 1.0 {
            return self.heights[i + 1];
        }
        self.heights[i] * (1.0 - f) + self.heights[i + 1] * f
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.value(t))
    }

    /// First node with time `>= t`.
    fn ceil_index(&self, t: f64) -> usize {
        match &self.times {
            Some(ts) => ts.partition_point(|&x| x < t),
            None => (t / self.dt).ceil() as usize,
        }
    }

    /// Last node with time `<= t` (0 when `t < 0`).
    fn floor_index(&self, t: f64) -> usize {
        match &self.times {
            Some(ts) => ts.partition_point(|&x| x <= t).saturating_sub(1),
            None => (t / self.dt).floor().max(0.0) as usize,
        }
    }

    fn min_between(&self, s: f64, t: f64) -> f64 {
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        let mut m = self.value(s).min(self.value(t));
        let lo = self.ceil_index(s);
        let hi = self.floor_index(t).min(self.steps());
        if lo <= hi {
            m = m.min(self.rmq().min(lo, hi));
        }
        m
    }

    /// `min g` over `[s ∧ t, s ∨ t]`.
    pub fn running_min(&self, s: f64, t: f64) -> Result<f64> {
        self.check(s)?;
        self.check(t)?;
        Ok(self.min_between(s, t))
    }

    pub(crate) fn dist_unchecked(&self, s: f64, t: f64) -> f64 {
        (self.value(s) + self.value(t) - 2.0 * self.min_between(s, t)).max(0.0)
    }

    pub fn dist(&self, s: f64, t: f64) -> Result<f64> {
        self.check(s)?;
        self.check(t)?;
        Ok(self.dist_unchecked(s, t))
    }

    pub fn height(&self) -> f64 {
        self.heights.iter().copied().fold(0.0, f64::max)
    }

    /// Index of a grid node attaining the height.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &h) in self.heights.iter().enumerate() {
            if h > self.heights[best] {
                best = i;
            }
        }
        best
    }

    /// The same tree re-rooted at the vertex of time `s0`, coded by
    /// `g'(s) = d(s0, s0 + s mod zeta)`.
    ///
    /// `g'` is piecewise linear with knots at the shifted grid times and where
    /// `g` crosses its running minimum seen from `s0`; all of them are kept, so
    /// the isometry holds at every real time. The result is on a uniform grid
    /// whenever those knots are (contour functions re-rooted at grid times).
    pub fn reroot(&self, s0: f64) -> Result<Excursion> {
        if !(0.0..self.zeta).contains(&s0) {
            return Err(Error::OutOfRange { time: s0, zeta: self.zeta });
        }
        let g0 = self.value(s0);
        let mut knots: Vec<(f64, f64)> = Vec::with_capacity(2 * self.heights.len() + 2);
        // forward part: u in [s0, zeta], minimum over [s0, u]
        let mut run = g0;
        let mut prev: Option<(f64, f64)> = None;
        for (t, y) in self.knots(s0, self.zeta) {
            if let Some((ta, ya)) = prev {
                if y < run && ya > run {
                    let tc = ta + (t - ta) * (ya - run) / (ya - y);
                    knots.push((tc - s0, g0 - run));
                }
            }
            run = run.min(y);
            knots.push((t - s0, g0 + y - 2.0 * run));
            prev = Some((t, y));
        }
        // wrapped part: u in [0, s0], minimum over [u, s0]
        let back: Vec<(f64, f64)> = self.knots(0.0, s0).collect();
        let mut wrapped: Vec<(f64, f64)> = Vec::with_capacity(2 * back.len());
        let mut run = g0;
        let mut prev: Option<(f64, f64)> = None;
        for &(t, y) in back.iter().rev() {
            if let Some((tb, yb)) = prev {
                if y < run && yb > run {
                    let tc = tb - (tb - t) * (yb - run) / (yb - y);
                    wrapped.push((tc, g0 - run));
                }
            }
            run = run.min(y);
            wrapped.push((t, g0 + y - 2.0 * run));
            prev = Some((t, y));
        }
        let shift = self.zeta - s0;
        knots.extend(wrapped.into_iter().rev().map(|(t, y)| (shift + t, y)));
        from_knots(knots)
    }

    /// Knots of the interpolant on `[t_lo, t_hi]`: the two endpoints and the
    /// grid nodes strictly between them.
    fn knots(&self, t_lo: f64, t_hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let first = self.floor_index(t_lo) + 1;
        let last = self.ceil_index(t_hi).min(self.steps() + 1);
        let inner = (first..last)
            .map(move |i| (self.time_of(i), self.heights[i]))
            .filter(move |&(t, _)| t > t_lo && t < t_hi);
        std::iter::once((t_lo, self.value(t_lo)))
            .chain(inner)
            .chain(std::iter::once((t_hi, self.value(t_hi))))
    }

    /// Components of `{g > level}` inside the window `[t_lo, t_hi]`.
    pub fn components_between(&self, level: f64, t_lo: f64, t_hi: f64) -> Vec<LevelComponent> {
        let thr = level + snap(level);
        let mut out = Vec::new();
        let mut open: Option<(f64, f64)> = None;
        let mut prev: Option<(f64, f64)> = None;
        for (t1, y1) in self.knots(t_lo, t_hi) {
            match prev {
                None => {
                    if y1 > thr {
                        open = Some((t1, y1 - level));
                    }
                }
                Some((t0, y0)) => match open.as_mut() {
                    None if y1 > thr => {
                        let start = if y0 >= level { t0 } else { t0 + (t1 - t0) * (level - y0) / (y1 - y0) };
                        open = Some((start.clamp(t0, t1), y1 - level));
                    }
                    Some((_, peak)) if y1 > thr => *peak = peak.max(y1 - level),
                    Some(&mut (start, peak)) => {
                        let end = if y1 >= level { t1 } else { t0 + (t1 - t0) * (y0 - level) / (y0 - y1) };
                        out.push(LevelComponent { start, end: end.clamp(t0, t1), peak });
                        open = None;
                    }
                    None => {}
                },
            }
            prev = Some((t1, y1));
        }
        if let (Some((start, peak)), Some((t, _))) = (open, prev) {
            out.push(LevelComponent { start, end: t, peak });
        }
        out
    }

    /// Subtrees originating from level `a`.
    pub fn level_decomposition(&self, a: f64) -> LevelDecomposition {
        LevelDecomposition { level: a, components: self.components_between(a, 0.0, self.zeta) }
    }

    /// `Z(a, eps)`: subtrees originating from level `a` with height at least `eps`.
    pub fn count_z(&self, a: f64, eps: f64) -> usize {
        let slack = snap(eps);
        self.components_between(a, 0.0, self.zeta)
            .iter()
            .filter(|c| c.peak >= eps - slack)
            .count()
    }

    /// `Leb{t in [t_lo, t_hi] : lo < g(t) <= hi}`.
    pub fn occupation_between(&self, lo: f64, hi: f64, t_lo: f64, t_hi: f64) -> f64 {
        let mut total = 0.0;
        let mut prev: Option<(f64, f64)> = None;
        for (t1, y1) in self.knots(t_lo, t_hi) {
            if let Some((t0, y0)) = prev {
                total += segment_occupation(t1 - t0, y0, y1, lo, hi);
            }
            prev = Some((t1, y1));
        }
        total
    }

    pub fn occupation(&self, lo: f64, hi: f64) -> f64 {
        self.segment_occupations(lo, hi).iter().sum()
    }

    /// `Leb{t in [t_i, t_{i+1}] : lo < g(t) <= hi}` for each grid step `i`.
    pub fn segment_occupations(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps());
        let mut prev: Option<(f64, f64)> = None;
        for (t1, y1) in self.knots(0.0, self.zeta) {
            if let Some((t0, y0)) = prev {
                out.push(segment_occupation(t1 - t0, y0, y1, lo, hi));
            }
            prev = Some((t1, y1));
        }
        out
    }

    /// Both local-time estimators at level `a` with window `eps` and
    /// normalization `v_eps = v(eps)`.
    pub fn local_time_mass(&self, a: f64, eps: f64, v_eps: f64) -> LocalTimeEstimate {
        if a > self.height() {
            return LocalTimeEstimate { counting: 0.0, occupation: 0.0 };
        }
        LocalTimeEstimate {
            counting: self.count_z(a - eps, eps) as f64 / v_eps,
            occupation: self.occupation(a - eps, a) / eps,
        }
    }

    /// The excursion of `g` time-changed by `A_s = int_0^s 1{g <= a}`: the
    /// tree truncated at height `a`.
    pub fn truncate(&self, a: f64) -> Excursion {
        if a >= self.height() {
            return self.clone();
        }
        // Concatenate the pieces of the path lying in {g <= a}.
        let mut knots: Vec<(f64, f64)> = vec![(0.0, 0.0)];
        let mut clock = 0.0;
        let thr = a + snap(a);
        for i in 0..self.steps() {
            let (y0, y1) = (self.heights[i], self.heights[i + 1]);
            let len = self.time_of(i + 1) - self.time_of(i);
            let below0 = y0 <= thr;
            let below1 = y1 <= thr;
            match (below0, below1) {
                (true, true) => {
                    clock += len;
                    knots.push((clock, y1));
                }
                (true, false) => {
                    clock += len * ((a - y0) / (y1 - y0)).clamp(0.0, 1.0);
                    knots.push((clock, a));
                }
                (false, true) => {
                    let part = len * ((a - y1) / (y0 - y1)).clamp(0.0, 1.0);
                    knots.push((clock, a));
                    clock += part;
                    knots.push((clock, y1));
                }
                (false, false) => {}
            }
        }
        let duration = clock;
        if self.times.is_some() {
            return from_knots(knots).expect("truncation of a valid excursion");
        }
        // Pick the coarsest spacing dt / 2^k that puts every knot on the grid.
        let mut spacing = None;
        for k in 0..=6 {
            let h = self.dt / f64::from(1u32 << k);
            let aligned = |t: f64| {
                let x = t / h;
                (x - x.round()).abs() < 1e-7
            };
            if aligned(duration) && knots.iter().all(|&(t, _)| aligned(t)) {
                spacing = Some(h);
                break;
            }
        }
        let steps = match spacing {
            Some(h) => (duration / h).round().max(1.0) as usize,
            None => ((duration / self.dt) * 64.0).ceil().max(1.0) as usize,
        };
        let h = duration / steps as f64;
        let mut heights = Vec::with_capacity(steps + 1);
        let mut j = 0;
        for k in 0..=steps {
            let t = k as f64 * h;
            while j + 2 < knots.len() && knots[j + 1].0 <= t {
                j += 1;
            }
            let (ta, ya) = knots[j];
            let (tb, yb) = knots[(j + 1).min(knots.len() - 1)];
            let y = if tb > ta { ya + (yb - ya) * ((t - ta) / (tb - ta)).clamp(0.0, 1.0) } else { yb };
            heights.push(y.max(0.0));
        }
        heights[0] = 0.0;
        heights[steps] = 0.0;
        Excursion::new(heights, duration).expect("truncation of a valid excursion")
    }

    /// Times `(l, r)` bounding the equivalence class of `s`: the extreme times
    /// `u` with `g(u) ≈ g(s)` and `min_{[s,u]} g >= g(s) - tol`.
    pub fn class_interval(&self, s: f64, tol: f64) -> (f64, f64) {
        let h = self.value(s);
        let lo = h - tol;
        if lo < 0.0 {
            return (0.0, self.zeta);
        }
        let rmq = self.rmq();
        let (i, _) = self.locate(s);
        let left = match rmq.last_below(i, lo) {
            None => 0.0,
            Some(k) => {
                let t0 = self.time_of(k);
                let t1 = if k == i { s } else { self.time_of(k + 1) };
                let (y0, y1) = (self.heights[k], if k == i { h } else { self.heights[k + 1] });
                t0 + (t1 - t0) * ((lo - y0) / (y1 - y0)).clamp(0.0, 1.0)
            }
        };
        let right = match rmq.first_below(i + 1, lo) {
            None => self.zeta,
            Some(k) => {
                let t1 = self.time_of(k);
                let t0 = if k == i + 1 { s } else { self.time_of(k - 1) };
                let (y0, y1) = (if k == i + 1 { h } else { self.heights[k - 1] }, self.heights[k]);
                t0 + (t1 - t0) * ((y0 - lo) / (y0 - y1)).clamp(0.0, 1.0)
            }
        };
        (left, right.max(left))
    }

    /// Number of connected components of `T \ {p(s)}`.
    pub fn multiplicity(&self, s: f64, tol: f64, cap: u32) -> Result<Multiplicity> {
        self.check(s)?;
        let h = self.value(s);
        let (l, r) = self.class_interval(s, tol);
        let above = self.components_between(h + tol, l, r).len() as u64;
        let root_side = u64::from(h > tol);
        let n = above + root_side;
        Ok(if n > u64::from(cap) { Multiplicity::Infinite } else { Multiplicity::Finite(n as u32) })
    }

    /// Default class tolerance `1e-9 * height`.
    pub fn default_tol(&self) -> f64 {
        1e-9 * self.height().max(f64::MIN_POSITIVE)
    }

    /// Strict local maxima of the interpolant, as `(time, level)`.
    pub fn extinction_points(&self) -> Vec<(f64, f64)> {
        self.heights
            .windows(3)
            .enumerate()
            .filter(|(_, w)| w[0] < w[1] && w[1] > w[2])
            .map(|(i, w)| (self.time_of(i + 1), w[1]))
            .collect()
    }

    /// Subtrees hanging off the ancestral line `[[root, p(s)]]`, read from the
    /// excursions of the forward and backward paths above their running infima.
    pub fn ancestral_decomposition(&self, s: f64) -> Result<Vec<AncestralSubtree>> {
        self.check(s)?;
        let mut out = Vec::new();
        // forward: h(t) = g(s + t)
        let forward: Vec<(f64, f64)> = self.knots(s, self.zeta).collect();
        for (a, b, level, peak) in running_inf_excursions(forward.iter().map(|&(t, y)| (t - s, y))) {
            out.push(AncestralSubtree { level, peak, start: s + a, end: s + b, side: Side::Forward });
        }
        let backward: Vec<(f64, f64)> = self.knots(0.0, s).collect();
        for (a, b, level, peak) in running_inf_excursions(backward.iter().rev().map(|&(t, y)| (s - t, y))) {
            out.push(AncestralSubtree { level, peak, start: s - b, end: s - a, side: Side::Backward });
        }
        Ok(out)
    }

    /// `(level, sub-excursion)` pairs of [`ancestral_decomposition`](Self::ancestral_decomposition).
    pub fn ancestral_subtrees(&self, s: f64) -> Result<Vec<(f64, Excursion)>> {
        Ok(self
            .ancestral_decomposition(s)?
            .into_iter()
            .map(|e| (e.level, self.window_excursion(e.start, e.end, e.level, e.side == Side::Backward)))
            .collect())
    }

    /// `g` on `[start, end]` shifted down by `level`, as an excursion on its own
    /// grid. Reuses the parent spacing when the window is grid-aligned.
    fn window_excursion(&self, start: f64, end: f64, level: f64, reversed: bool) -> Excursion {
        let span = (end - start).max(f64::MIN_POSITIVE);
        let xs = start / self.dt;
        let xm = span / self.dt;
        let aligned = self.times.is_none()
            && (xs - xs.round()).abs() < 1e-7
            && (xm - xm.round()).abs() < 1e-7
            && xm.round() >= 1.0;
        if !aligned {
            let knots: Vec<(f64, f64)> = if reversed {
                self.knots(start, end).map(|(t, y)| (end - t, (y - level).max(0.0))).collect::<Vec<_>>().into_iter().rev().collect()
            } else {
                self.knots(start, end).map(|(t, y)| (t - start, (y - level).max(0.0))).collect()
            };
            return from_knots(knots).unwrap_or_else(|_| Excursion::new(vec![0.0, 0.0], span).expect("positive span"));
        }
        let steps = xm.round() as usize;
        let first = xs.round() as usize;
        let mut heights: Vec<f64> = (0..=steps)
            .map(|k| {
                let idx = if reversed { first + steps - k } else { first + k };
                (self.heights[idx.min(self.steps())] - level).max(0.0)
            })
            .collect();
        heights[0] = 0.0;
        heights[steps] = 0.0;
        Excursion::new(heights, span).expect("window of a valid excursion")
    }

    /// A time drawn from the normalized mass measure (Lebesgue on `[0, zeta]`).
    pub fn mass_sample(&self, rng: &mut Rng) -> TreePoint {
        TreePoint(rng.random::<f64>() * self.zeta)
    }

    /// Total mass of the tree's mass measure.
    pub fn mass(&self) -> f64 {
        self.zeta
    }

    // ---- serialization ----

    const MAGIC: [u8; 4] = *b"LVYX";

    /// Binary layout, little-endian: magic `LVYX`, version `u32`, `M: u64`,
    /// `zeta: f64`, `M + 1` heights; version 2 appends the `M + 1` knot times.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let version: u32 = if self.times.is_some() { 2 } else { 1 };
        w.write_all(&Self::MAGIC)?;
        w.write_all(&version.to_le_bytes())?;
        w.write_all(&(self.steps() as u64).to_le_bytes())?;
        w.write_all(&self.zeta.to_le_bytes())?;
        for h in self.heights.iter().chain(self.times.iter().flatten()) {
            w.write_all(&h.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != Self::MAGIC {
            return Err(Error::Format("bad excursion magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != 1 && version != 2 {
            return Err(Error::Format(format!("unsupported excursion version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let m = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let zeta = f64::from_le_bytes(b8);
        let mut read_vec = |r: &mut R| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(m + 1);
            for _ in 0..=m {
                r.read_exact(&mut b8)?;
                v.push(f64::from_le_bytes(b8));
            }
            Ok(v)
        };
        let heights = read_vec(&mut r)?;
        if version == 2 {
            let times = read_vec(&mut r)?;
            if times.last() != Some(&zeta) {
                return Err(Error::Format("last knot time differs from zeta".into()));
            }
            return Self::with_times(heights, times);
        }
        Self::new(heights, zeta)
    }

    pub fn to_ndjson(&self) -> String {
        let rec = ExcursionRecord { zeta: self.zeta, heights: self.heights.clone(), times: self.times.clone() };
        serde_json::to_string(&rec).expect("finite floats serialize")
    }

    pub fn from_ndjson(line: &str) -> Result<Self> {
        let rec: ExcursionRecord = serde_json::from_str(line)?;
        match rec.times {
            Some(times) if times.last() == Some(&rec.zeta) => Self::with_times(rec.heights, times),
            Some(_) => Err(Error::Format("last knot time differs from zeta".into())),
            None => Self::new(rec.heights, rec.zeta),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ExcursionRecord {
    zeta: f64,
    heights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    times: Option<Vec<f64>>,
}

/// Builds an excursion through `(time, value)` knots, merging repeated times
/// and using a uniform grid when the knots already lie on one.
fn from_knots(knots: Vec<(f64, f64)>) -> Result<Excursion> {
    let mut times: Vec<f64> = Vec::with_capacity(knots.len());
    let mut heights: Vec<f64> = Vec::with_capacity(knots.len());
    for (t, y) in knots {
        if times.last().is_some_and(|&last| t <= last) {
            *heights.last_mut().expect("paired with times") = y.max(0.0);
            continue;
        }
        times.push(t);
        heights.push(y.max(0.0));
    }
    if times.len() < 2 {
        return Err(Error::InvalidExcursion("fewer than two distinct knot times".into()));
    }
    heights[0] = 0.0;
    *heights.last_mut().expect("len >= 2") = 0.0;
    let zeta = *times.last().expect("len >= 2");
    let dt = zeta / (times.len() - 1) as f64;
    let uniform = times.iter().enumerate().all(|(k, &t)| (t - k as f64 * dt).abs() <= 1e-9 * dt);
    if uniform {
        Excursion::new(heights, zeta)
    } else {
        times[0] = 0.0;
        Excursion::with_times(heights, times)
    }
}

/// Time spent in `(lo, hi]` by a linear segment of duration `len` from `y0` to `y1`.
fn segment_occupation(len: f64, y0: f64, y1: f64, lo: f64, hi: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if y0 == y1 {
        return if y0 > lo && y0 <= hi { len } else { 0.0 };
    }
    let (a, b) = if y0 < y1 { (y0, y1) } else { (y1, y0) };
    let overlap = (b.min(hi) - a.max(lo)).max(0.0);
    len * overlap / (b - a)
}

/// Excursions of a path above its running infimum, as
/// `(start, end, level, peak)` in path time.
fn running_inf_excursions<I: Iterator<Item = (f64, f64)>>(path: I) -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    let mut inf = f64::INFINITY;
    let mut open: Option<(f64, f64)> = None;
    let mut prev: Option<(f64, f64)> = None;
    for (t1, y1) in path {
        match prev {
            None => inf = y1,
            Some((t0, y0)) => {
                let thr = inf + snap(inf);
                match open.as_mut() {
                    None if y1 > thr => open = Some((t0, y1 - inf)),
                    None => inf = inf.min(y1),
                    Some((_, peak)) if y1 > thr => *peak = peak.max(y1 - inf),
                    Some(&mut (start, peak)) => {
                        let end = if y1 >= inf { t1 } else { t0 + (t1 - t0) * (y0 - inf) / (y0 - y1) };
                        out.push((start, end.clamp(t0, t1), inf, peak));
                        open = None;
                        inf = inf.min(y1);
                    }
                }
            }
        }
        prev = Some((t1, y1));
    }
    if let (Some((start, peak)), Some((t, _))) = (open, prev) {
        out.push((start, t, inf, peak));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent() -> Excursion {
        Excursion::new(vec![0.0, 1.0, 0.0], 2.0).unwrap()
    }

    fn two_peak() -> Excursion {
        Excursion::new(vec![0.0, 1.0, 0.5, 1.5, 0.0], 4.0).unwrap()
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Excursion::new(vec![0.0], 1.0).is_err());
        assert!(Excursion::new(vec![0.0, 1.0], 1.0).is_err());
        assert!(Excursion::new(vec![0.0, -1.0, 0.0], 1.0).is_err());
        assert!(Excursion::new(vec![0.0, 1.0, 0.0], 0.0).is_err());
        assert!(tent().dist(-0.1, 1.0).is_err());
        assert!(tent().running_min(0.0, 2.5).is_err());
    }

    #[test]
    fn running_min_and_dist_examples() {
        let t = tent();
        assert_eq!(t.running_min(0.5, 1.5).unwrap(), 0.5);
        assert_eq!(t.running_min(0.7, 0.7).unwrap(), t.value(0.7));
        assert_eq!(t.dist(0.5, 1.5).unwrap(), 0.0);
        let p = two_peak();
        assert_eq!(p.running_min(1.0, 3.0).unwrap(), 0.5);
        assert_eq!(p.dist(1.0, 3.0).unwrap(), 1.5);
        assert_eq!(p.dist(2.3, 2.3).unwrap(), 0.0);
    }

    #[test]
    fn height_and_reroot() {
        let p = two_peak();
        assert_eq!(p.height(), 1.5);
        assert_eq!(tent().height(), 1.0);
        assert_eq!(p.reroot(0.0).unwrap(), p);
        // the farthest points from the second summit are the root and the first summit
        let r = p.reroot(3.0).unwrap();
        let max_from_3 = (0..=400).map(|k| p.dist(3.0, k as f64 * 0.01).unwrap()).fold(0.0, f64::max);
        assert!((max_from_3 - 1.5).abs() < 1e-12);
        assert!((r.height() - max_from_3).abs() < 1e-12);
        assert!((p.dist(3.0, 1.0).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn level_decomposition_examples() {
        let p = two_peak();
        let d = p.level_decomposition(0.75);
        assert_eq!(d.components.len(), 2);
        let c = &d.components;
        assert!((c[0].start - 0.75).abs() < 1e-12 && (c[0].end - 1.5).abs() < 1e-12);
        assert!((c[1].start - 2.25).abs() < 1e-12 && (c[1].end - 3.5).abs() < 1e-12);
        assert!((c[0].peak - 0.25).abs() < 1e-12 && (c[1].peak - 0.75).abs() < 1e-12);
        let subs = d.sub_excursions(&p);
        assert!((subs[0].height() - 0.25).abs() < 1e-12);
        assert!((subs[1].height() - 0.75).abs() < 1e-12);
        assert!(p.level_decomposition(1.5).components.is_empty());
        assert!(p.level_decomposition(2.0).components.is_empty());
        let t = tent().level_decomposition(0.5);
        assert_eq!(t.components.len(), 1);
        assert!((t.components[0].start - 0.5).abs() < 1e-12 && (t.components[0].end - 1.5).abs() < 1e-12);
    }

    #[test]
    fn counting_examples() {
        let p = two_peak();
        assert_eq!(p.count_z(0.75, 0.2), 2);
        assert_eq!(p.count_z(0.75, 0.5), 1);
        assert_eq!(p.count_z(1.6, 0.1), 0);
    }

    #[test]
    fn local_time_examples() {
        let p = two_peak();
        assert_eq!(p.local_time_mass(1.6, 0.1, 10.0), LocalTimeEstimate { counting: 0.0, occupation: 0.0 });
        // time in (1.0, 1.25]: 0.25 on the rising segment [2,3], 0.25/1.5 on the falling one [3,4]
        let est = p.local_time_mass(1.25, 0.25, 4.0);
        let oracle = 4.0 * (0.25 + 0.25 / 1.5);
        assert!((est.occupation - oracle).abs() < 1e-12, "{}", est.occupation);
        assert_eq!(est.counting, 1.0 / 4.0);
    }

    #[test]
    fn truncate_examples() {
        let p = two_peak();
        assert_eq!(p.truncate(2.0), p);
        let tr = p.truncate(0.75);
        assert!((tr.height() - 0.75).abs() < 1e-12);
        let removed: f64 = p.level_decomposition(0.75).components.iter().map(|c| c.duration()).sum();
        assert!((tr.zeta() + removed - p.zeta()).abs() < 1e-12);
        assert_eq!(tr.truncate(0.75), tr);
    }

    #[test]
    fn multiplicity_examples() {
        let p = two_peak();
        let (l, r) = p.class_interval(2.0, 1e-9);
        assert!((l - 0.5).abs() < 1e-6 && (r - 11.0 / 3.0).abs() < 1e-6);
        assert_eq!(p.multiplicity(2.0, 1e-9, 64).unwrap(), Multiplicity::Finite(3));
        assert_eq!(tent().multiplicity(0.5, 1e-9, 64).unwrap(), Multiplicity::Finite(2));
        assert_eq!(p.multiplicity(3.0, 1e-9, 64).unwrap(), Multiplicity::Finite(1));
        assert_eq!(tent().multiplicity(1.0, 1e-9, 64).unwrap(), Multiplicity::Finite(1));
        // root of the two-peak tree has a single edge
        assert_eq!(p.multiplicity(0.0, 1e-9, 64).unwrap(), Multiplicity::Finite(1));
        // a star with many edges at the root exceeds a small cap
        let mut star = vec![0.0];
        for _ in 0..5 {
            star.extend([1.0, 0.0]);
        }
        let star = Excursion::new(star, 10.0).unwrap();
        assert_eq!(star.multiplicity(0.0, 1e-9, 64).unwrap(), Multiplicity::Finite(5));
        assert_eq!(star.multiplicity(0.0, 1e-9, 4).unwrap(), Multiplicity::Infinite);
    }

    #[test]
    fn extinction_point_examples() {
        assert_eq!(tent().extinction_points(), vec![(1.0, 1.0)]);
        assert_eq!(two_peak().extinction_points(), vec![(1.0, 1.0), (3.0, 1.5)]);
        let ramp = Excursion::new(vec![0.0, 1.0, 2.0, 3.0, 2.0, 1.0, 0.0], 6.0).unwrap();
        assert_eq!(ramp.extinction_points().len(), 1);
    }

    #[test]
    fn ancestral_examples() {
        assert!(tent().ancestral_decomposition(1.0).unwrap().is_empty());
        let p = two_peak();
        let anc = p.ancestral_decomposition(3.0).unwrap();
        assert_eq!(anc.len(), 1);
        assert!((anc[0].level - 0.5).abs() < 1e-12 && (anc[0].peak - 0.5).abs() < 1e-12);
        assert_eq!(anc[0].side, Side::Backward);
        assert!((anc[0].start - 0.5).abs() < 1e-12 && (anc[0].end - 2.0).abs() < 1e-12);
        let subs = p.ancestral_subtrees(3.0).unwrap();
        assert!((subs[0].1.height() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn serialization_roundtrip() {
        let p = two_peak();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(Excursion::read_binary(&buf[..]).unwrap(), p);
        assert_eq!(Excursion::from_ndjson(&p.to_ndjson()).unwrap(), p);
        assert!(Excursion::read_binary(&b"nope"[..]).is_err());
    }

    #[test]
    fn mass_sample_is_reproducible() {
        let p = two_peak();
        let a = p.mass_sample(&mut crate::rng::seeded(5));
        let b = p.mass_sample(&mut crate::rng::seeded(5));
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!((0.0..=4.0).contains(&a.0));
        assert_eq!(p.mass(), 4.0);
    }
}
