//! Nets, covering numbers and box-counting dimensions of coded trees.
//!
//! The net at radius `delta` takes the root together with, for every level
//! `k delta` and every subtree above that level reaching `(k+1) delta`, the
//! first point of that subtree at height `(k+1) delta`. Points are at least
//! `delta` apart and every point of the tree lies within `3 delta` of one.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coded_tree::Excursion;
use crate::error::{Error, Result};
use crate::mechanism::BranchingMechanism;
use crate::stattests::ols_slope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    pub delta: f64,
    /// The net is `delta`-separated, so this is also a packing number.
    pub packing_count: usize,
    /// The same net seen as a cover of radius `cover_radius`.
    pub cover_count: usize,
    /// Largest distance from a grid time to the net.
    pub cover_radius: f64,
    pub net_times: Vec<f64>,
}

impl NetReport {
    /// Smallest pairwise distance between net points (quadratic in the net size).
    pub fn min_separation(&self, e: &Excursion) -> f64 {
        let mut best = f64::INFINITY;
        for (i, &s) in self.net_times.iter().enumerate() {
            for &t in &self.net_times[i + 1..] {
                best = best.min(e.dist_unchecked(s, t));
            }
        }
        best
    }
}

/// Builds the net and measures its cover radius over all grid times.
pub fn build_net(e: &Excursion, delta: f64) -> NetReport {
    sweep(e, delta, true)
}

/// Size of the net at `delta`, skipping the cover-radius pass.
pub fn net_count(e: &Excursion, delta: f64) -> usize {
    sweep(e, delta, false).packing_count
}

fn sweep(e: &Excursion, delta: f64, with_radius: bool) -> NetReport {
    assert!(delta > 0.0, "net radius must be positive");
    let h = e.heights();
    let levels = (e.height() / delta).floor() as usize + 2;
    let slack = 1e-12 * delta.max(1.0);
    let mut armed = vec![true; levels];
    // time of the last upcrossing of ((k+1) delta) for each level k
    let mut last_up = vec![f64::NAN; levels];
    let mut net_times = vec![0.0];
    let mut cover_radius: f64 = 0.0;
    for i in 0..h.len() {
        let y = h[i];
        if i > 0 {
            let y0 = h[i - 1];
            let (t0, t1) = (e.time_of(i - 1), e.time_of(i));
            if y > y0 {
                // upcrossings of (k+1) delta in (y0, y]
                let k_lo = ((y0 + slack) / delta).floor() as usize; // (k+1) delta > y0
                let k_hi = ((y + slack) / delta).floor() as usize; // (k+1) delta <= y
                for k in k_lo..k_hi.min(levels) {
                    if armed[k] {
                        let level = (k + 1) as f64 * delta;
                        let t = t0 + (t1 - t0) * ((level - y0) / (y - y0)).clamp(0.0, 1.0);
                        net_times.push(t);
                        last_up[k] = t;
                        armed[k] = false;
                    }
                }
            } else if y < y0 {
                // the path is back at or below k delta for k delta >= y
                let k_lo = ((y - slack) / delta).ceil().max(0.0) as usize;
                let k_hi = ((y0 / delta).floor() as usize).min(levels - 1);
                for slot in armed.iter_mut().take(k_hi + 1).skip(k_lo) {
                    *slot = true;
                }
            }
        }
        if !with_radius {
            continue;
        }
        // distance from this grid point to the net
        let t = e.time_of(i);
        let j = ((y + slack) / delta).floor() as usize;
        let d = if j == 0 {
            y
        } else {
            let rep = last_up[j - 1];
            if rep.is_nan() { y } else { e.dist_unchecked(rep, t) }
        };
        cover_radius = cover_radius.max(d);
    }
    let count = net_times.len();
    NetReport { delta, packing_count: count, cover_count: count, cover_radius, net_times }
}

/// One `delta` of the covering-bound check. The lower bound on `N(T, delta)`
/// is checked against the packing count at `2 delta` (which is at most
/// `N(T, delta)`), the upper bound against the net count at `delta / 3`
/// (a cover by balls of radius `delta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovtCheck {
    pub delta: f64,
    pub lower_bound: f64,
    pub packing_at_2delta: usize,
    pub upper_bound: f64,
    pub cover_at_delta_over_3: usize,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

impl CovtCheck {
    pub fn pass(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

/// `v(2d) zeta / (4d) <= N(T, d) <= 12 v(d/6) zeta / d` for each `d`.
pub fn check_covt_bounds(e: &Excursion, m: &BranchingMechanism, delta_grid: &[f64]) -> Result<Vec<CovtCheck>> {
    let zeta = e.zeta();
    delta_grid
        .iter()
        .map(|&d| {
            let lower_bound = m.solve_v(2.0 * d)? * zeta / (4.0 * d);
            let upper_bound = 12.0 * m.solve_v(d / 6.0)? * zeta / d;
            let packing = net_count(e, 2.0 * d);
            let cover = net_count(e, d / 3.0);
            Ok(CovtCheck {
                delta: d,
                lower_bound,
                packing_at_2delta: packing,
                upper_bound,
                cover_at_delta_over_3: cover,
                lower_ok: lower_bound <= packing as f64,
                upper_ok: cover as f64 <= upper_bound,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDimension {
    pub slope: f64,
    pub stderr: f64,
    pub deltas: Vec<f64>,
    pub counts: Vec<usize>,
}

/// `delta = height * 2^{-j}` for `j = j_lo..=j_hi`.
pub fn dyadic_grid(height: f64, j_lo: u32, j_hi: u32) -> Vec<f64> {
    (j_lo..=j_hi).map(|j| height * 0.5f64.powi(j as i32)).collect()
}

/// Drops the coarsest and finest radius of a measured grid before regression.
pub fn inner_octaves<T>(values: &[T]) -> &[T] {
    if values.len() <= 2 { &values[..0] } else { &values[1..values.len() - 1] }
}

fn regress(deltas: &[f64], counts: &[usize]) -> Result<(f64, f64)> {
    if deltas.len() < 4 {
        return Err(Error::Degenerate(format!("need at least 4 radii, got {}", deltas.len())));
    }
    let x: Vec<f64> = deltas.iter().map(|d| -d.ln()).collect();
    let y: Vec<f64> = counts.iter().map(|&c| (c.max(1) as f64).ln()).collect();
    Ok(ols_slope(&x, &y))
}

/// Slope of `log(net count)` against `log(1/delta)`.
pub fn box_dimension(e: &Excursion, delta_grid: &[f64]) -> Result<BoxDimension> {
    let counts: Vec<usize> = delta_grid.iter().map(|&d| net_count(e, d)).collect();
    let (slope, stderr) = regress(delta_grid, &counts)?;
    Ok(BoxDimension { slope, stderr, deltas: delta_grid.to_vec(), counts })
}

/// Pooled slope over several trees with per-tree intercepts, when each tree
/// is measured on the grid `height_i * 2^{-j}` for the same exponents `j`.
pub fn pooled_slope(log_counts: &[Vec<f64>], exponents: &[f64]) -> (f64, f64) {
    let x: Vec<f64> = exponents.iter().map(|j| j * std::f64::consts::LN_2).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in log_counts {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        for (xi, yi) in x.iter().zip(row) {
            xs.push(xi - mx);
            ys.push(yi - m);
        }
    }
    ols_slope(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCover {
    pub delta: f64,
    /// `Z(a - delta, delta)`: subtrees from `a - delta` reaching `a`.
    pub count: usize,
    /// `count / v(delta)`.
    pub ratio: f64,
    /// Occupation estimate of the local time at `a` with window `delta`.
    pub occupation: f64,
}

/// Covering counts of the level set at height `a`, normalized by `v(delta)`.
pub fn level_set_covering(e: &Excursion, a: f64, delta_grid: &[f64], v_values: &[f64]) -> Result<Vec<LevelCover>> {
    if delta_grid.len() != v_values.len() {
        return Err(Error::Unsupported("delta grid and v values differ in length".into()));
    }
    Ok(delta_grid
        .iter()
        .zip(v_values)
        .map(|(&d, &v)| {
            if a > e.height() {
                return LevelCover { delta: d, count: 0, ratio: 0.0, occupation: 0.0 };
            }
            let count = e.count_z(a - d, d);
            LevelCover { delta: d, count, ratio: count as f64 / v, occupation: e.occupation(a - d, a) / d }
        })
        .collect())
}

/// Slope of `log Z(a - delta, delta)` against `log(1/delta)`.
pub fn level_set_dimension(e: &Excursion, a: f64, delta_grid: &[f64]) -> Result<BoxDimension> {
    let counts: Vec<usize> = delta_grid.iter().map(|&d| e.count_z(a - d, d)).collect();
    let (slope, stderr) = regress(delta_grid, &counts)?;
    Ok(BoxDimension { slope, stderr, deltas: delta_grid.to_vec(), counts })
}

/// One row of a regression table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub sample_id: usize,
    pub delta: f64,
    pub packing_count: usize,
    pub cover_count: usize,
    pub zeta: f64,
    pub height: f64,
}

pub const REGRESSION_HEADER: [&str; 8] =
    ["sample_id", "delta", "packing_count", "cover_count", "zeta", "height", "slope", "stderr"];

/// Writes the rows followed by a `summary` row carrying the slope.
pub fn write_regression_csv<W: Write>(w: W, rows: &[RegressionRow], slope: f64, stderr: f64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REGRESSION_HEADER)?;
    for r in rows {
        out.write_record([
            r.sample_id.to_string(),
            r.delta.to_string(),
            r.packing_count.to_string(),
            r.cover_count.to_string(),
            r.zeta.to_string(),
            r.height.to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    out.write_record(["summary", "", "", "", "", "", &slope.to_string(), &stderr.to_string()])?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segment() -> Excursion {
        Excursion::new(vec![0.0, 1.0, 0.0], 2.0).unwrap()
    }

    #[test]
    fn segment_net() {
        let r = build_net(&segment(), 0.25);
        assert_eq!(r.packing_count, 5);
        let mut heights: Vec<f64> = r.net_times.iter().map(|&t| segment().value(t)).collect();
        heights.sort_by(f64::total_cmp);
        assert_eq!(heights, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(r.cover_radius <= 0.25 + 1e-12);
        assert!(r.min_separation(&segment()) >= 0.25 - 1e-12);
    }

    #[test]
    fn coarse_net_is_root() {
        let p = Excursion::new(vec![0.0, 1.0, 0.5, 1.5, 0.0], 4.0).unwrap();
        assert_eq!(build_net(&p, 2.0).packing_count, 1);
        assert_eq!(build_net(&segment(), 1.5).packing_count, 1);
    }

    #[test]
    fn two_peak_net() {
        let p = Excursion::new(vec![0.0, 1.0, 0.5, 1.5, 0.0], 4.0).unwrap();
        let r = build_net(&p, 0.5);
        // levels 0, 0.5, 1.0: one subtree from 0, two from 0.5 (heights 0.5, 1.0), one from 1.0
        assert_eq!(r.packing_count, 5);
        assert!(r.min_separation(&p) >= 0.5 - 1e-12);
        assert!(r.cover_radius < 1.5);
    }

    #[test]
    fn segment_dimension_is_one() {
        let d = box_dimension(&segment(), &dyadic_grid(1.0, 3, 8)).unwrap();
        assert!((d.slope - 1.0).abs() < 0.1, "{}", d.slope);
        assert!(box_dimension(&segment(), &[0.1, 0.2]).is_err());
    }

    #[test]
    fn level_cover_above_height() {
        let r = level_set_covering(&segment(), 2.0, &[0.1], &[10.0]).unwrap();
        assert_eq!(r[0].count, 0);
        assert_eq!(r[0].ratio, 0.0);
    }

    #[test]
    fn regression_csv_header() {
        let mut buf = Vec::new();
        write_regression_csv(&mut buf, &[], 2.0, 0.1).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sample_id,delta,packing_count,cover_count,zeta,height,slope,stderr\n"));
        assert!(text.contains("summary,,,,,,2,0.1"));
    }
}
