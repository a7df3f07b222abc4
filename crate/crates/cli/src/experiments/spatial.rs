use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::distribution::{ContinuousCDF, Normal};

use levyforest::parallel::map_indexed;
use levyforest::rng::derive_seed;
use levyforest::spatial::{assemble_superprocess, range_box_dimension, SuperprocessOptions};
use levyforest::stattests::{ks_one_sample, mean, TestReport};

use super::{collect, schema_err, to_value, ExperimentKind, Observation, Outcome, RunContext};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub x: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RangeParams {
    pub forests: usize,
    pub n: u32,
    /// Boxes of side `2^-j`, `j = j_lo..=j_hi`.
    pub j_lo: u32,
    pub j_hi: u32,
    /// Defaults to the range dimension of the mechanism in `R^k`.
    pub expected: Option<f64>,
    pub tolerance: f64,
    pub node_cap: usize,
}

impl Default for RangeParams {
    fn default() -> Self {
        Self { forests: 20, n: 1000, j_lo: 1, j_hi: 5, expected: None, tolerance: 0.4, node_cap: 20_000_000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuperBmParams {
    pub a_grid: Vec<f64>,
    pub mu: Vec<Atom>,
    pub lambda: f64,
    pub laplace_tolerance: f64,
    /// Level of the marginal KS tests, run when `mu` is a single atom.
    pub ks_alpha: f64,
    pub threshold: Option<f64>,
    pub eps: Option<f64>,
    pub node_cap: usize,
    /// Box-counting of the range at the first level of `a_grid`.
    pub range: Option<RangeParams>,
}

impl Default for SuperBmParams {
    fn default() -> Self {
        let opts = SuperprocessOptions::default();
        Self {
            a_grid: vec![1.0],
            mu: vec![Atom { x: vec![0.0; 3], mass: 1.0 }],
            lambda: 1.0,
            laplace_tolerance: 0.01,
            ks_alpha: 0.01,
            threshold: opts.threshold,
            eps: opts.eps,
            node_cap: opts.node_cap,
            range: None,
        }
    }
}

/// Super-Brownian motion assembled from a Poisson forest of labelled trees.
pub struct SuperBm;

impl ExperimentKind for SuperBm {
    fn name(&self) -> &'static str {
        "superbm"
    }

    fn default_params(&self) -> Value {
        to_value(SuperBmParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: SuperBmParams = ctx.config.params()?;
        if p.a_grid.is_empty() || p.a_grid.iter().any(|a| !(*a > 0.0)) {
            return Err(schema_err(self.name(), "a_grid must be a non-empty list of positive levels"));
        }
        let m = &ctx.mechanism;
        let (n, seed) = (ctx.config.n, ctx.config.seed);
        let mu: Vec<(Vec<f64>, f64)> = p.mu.iter().map(|a| (a.x.clone(), a.mass)).collect();
        let opts = SuperprocessOptions { threshold: p.threshold, eps: p.eps, node_cap: p.node_cap };
        // per forest and level: total mass and the first atom
        let rows = collect(map_indexed(ctx.config.samples, |i| {
            let s = assemble_superprocess(m, &mu, &p.a_grid, n, opts, ctx.task_seed(i))?;
            Ok(s.levels.iter().map(|c| (c.total, c.len(), c.atoms().next().map(|(x, _)| x.to_vec()))).collect::<Vec<_>>())
        }))?;
        let mut out = Outcome::default();
        for (j, &a) in p.a_grid.iter().enumerate() {
            let ua = m.solve_u(a, p.lambda);
            let want = (-p.mu.iter().map(|x| x.mass * ua).sum::<f64>()).exp();
            let emp = mean(&rows.iter().map(|r| (-p.lambda * r[j].0).exp()).collect::<Vec<_>>());
            let gap = (emp - want).abs();
            out.checks.push(
                TestReport::new(format!("superbm.laplace[{a}]"), gap, gap <= p.laplace_tolerance, rows.len(), seed)
                    .detail("empirical", emp)
                    .detail("predicted", want),
            );
            out.observations.push(Observation::new("laplace_empirical", 0, a, emp));
            out.observations.push(Observation::new("laplace_predicted", 0, a, want));
            if let [atom] = p.mu.as_slice() {
                for (c, &x0) in atom.x.iter().enumerate() {
                    let normal = Normal::new(x0, a.sqrt()).map_err(|e| schema_err(self.name(), e))?;
                    let xs: Vec<f64> = rows.iter().filter_map(|r| r[j].2.as_ref().map(|x| x[c])).collect();
                    if xs.is_empty() {
                        continue;
                    }
                    let (d, pv) = ks_one_sample(&xs, |x| normal.cdf(x));
                    out.checks.push(
                        TestReport::new(format!("superbm.marginal_ks[{a}][{c}]"), d, pv >= p.ks_alpha, xs.len(), seed)
                            .with_p(pv),
                    );
                }
            }
        }
        for (i, r) in rows.iter().enumerate() {
            for (j, (total, atoms, _)) in r.iter().enumerate() {
                out.records.push(json!({ "forest": i, "a": p.a_grid[j], "total_mass": total, "atoms": atoms }));
                out.observations.push(Observation::new("total_mass", i, p.a_grid[j], *total));
            }
        }
        if let Some(rp) = &p.range {
            if rp.j_hi <= rp.j_lo || rp.forests == 0 {
                return Err(schema_err(self.name(), "range needs forests >= 1 and j_lo < j_hi"));
            }
            let k = mu[0].0.len() as u32;
            let expected = match rp.expected {
                Some(x) => x,
                None => m.theoretical_dims(0.0, k)?.dim_range,
            };
            let ropts = SuperprocessOptions { node_cap: rp.node_cap, ..opts };
            let a = p.a_grid[0];
            let clouds = collect(map_indexed(rp.forests, |i| {
                let mut s = assemble_superprocess(m, &mu, &[a], rp.n, ropts, derive_seed(!seed, i as u64))?;
                Ok(s.levels.remove(0))
            }))?;
            let grid: Vec<f64> = (rp.j_lo..=rp.j_hi).map(|j| 0.5f64.powi(j as i32)).collect();
            let r = range_box_dimension(&clouds, &grid)?;
            out.checks.push(
                TestReport::new("superbm.range_slope", r.slope, (r.slope - expected).abs() <= rp.tolerance, rp.forests, seed)
                    .detail("stderr", r.stderr)
                    .detail("expected", expected)
                    .detail("tolerance", rp.tolerance),
            );
            for (d, c) in r.deltas.iter().zip(&r.counts) {
                out.observations.push(Observation::new("range_boxes", 0, *d, *c as f64));
            }
        }
        Ok(out)
    }
}
