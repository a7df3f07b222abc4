use serde::{Deserialize, Serialize};
use serde_json::Value;

use levyforest::coded_tree::Excursion;
use levyforest::fractal::{
    check_covt_bounds, dyadic_grid, inner_octaves, level_set_covering, net_count, pooled_slope, write_regression_csv,
    CovtCheck, LevelCover, RegressionRow,
};
use levyforest::levy_sampler::sample_levy_tree;
use levyforest::parallel::map_indexed;
use levyforest::stattests::TestReport;

use super::{collect, schema_err, to_value, ExperimentKind, Observation, Outcome, RunContext, Table};
use crate::error::{CliError, Result};

/// Octaves `j_lo..=j_hi` of `height * 2^-j`; the outer two are measured but
/// left out of the regression.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DimsParams {
    pub a: f64,
    pub j_lo: u32,
    pub j_hi: u32,
    /// Defaults to the packing dimension of the mechanism.
    pub expected: Option<f64>,
    pub tolerance: f64,
}

impl Default for DimsParams {
    fn default() -> Self {
        Self { a: 1.0, j_lo: 2, j_hi: 8, expected: None, tolerance: 0.3 }
    }
}

fn check_octaves(kind: &str, j_lo: u32, j_hi: u32) -> Result<()> {
    if j_hi < j_lo + 3 || j_hi > 40 {
        return Err(schema_err(kind, "need j_lo + 3 <= j_hi <= 40 for two inner octaves"));
    }
    Ok(())
}

fn exponents(j_lo: u32, j_hi: u32) -> Vec<f64> {
    (j_lo + 1..j_hi).map(f64::from).collect()
}

fn ln_count(c: usize) -> f64 {
    (c.max(1) as f64).ln()
}

fn tree(ctx: &RunContext, a: f64, i: usize) -> levyforest::Result<Excursion> {
    Ok(sample_levy_tree(&ctx.mechanism, ctx.config.n, a, ctx.task_seed(i))?.excursion)
}

fn slope_check(name: &str, ctx: &RunContext, slope: f64, stderr: f64, expected: f64, tolerance: f64) -> TestReport {
    TestReport::new(name, slope, (slope - expected).abs() <= tolerance, ctx.config.samples, ctx.config.seed)
        .detail("stderr", stderr)
        .detail("expected", expected)
        .detail("tolerance", tolerance)
}

/// Box-counting dimension of the tree via delta-net counts.
pub struct Dims;

impl ExperimentKind for Dims {
    fn name(&self) -> &'static str {
        "dims"
    }

    fn default_params(&self) -> Value {
        to_value(DimsParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: DimsParams = ctx.config.params()?;
        check_octaves(self.name(), p.j_lo, p.j_hi)?;
        let expected = match p.expected {
            Some(x) => x,
            None => ctx.mechanism.theoretical_dims(0.0, 1)?.dim_p_t,
        };
        // one tree in memory per worker
        let trees = collect(map_indexed(ctx.config.samples, |i| {
            let e = tree(ctx, p.a, i)?;
            let grid = dyadic_grid(e.height(), p.j_lo, p.j_hi);
            let rows: Vec<RegressionRow> = grid
                .iter()
                .map(|&delta| {
                    let c = net_count(&e, delta);
                    RegressionRow { sample_id: i, delta, packing_count: c, cover_count: c, zeta: e.zeta(), height: e.height() }
                })
                .collect();
            Ok(rows)
        }))?;
        let logs: Vec<Vec<f64>> = trees
            .iter()
            .map(|rows| inner_octaves(&rows.iter().map(|r| ln_count(r.packing_count)).collect::<Vec<_>>()).to_vec())
            .collect();
        let (slope, stderr) = pooled_slope(&logs, &exponents(p.j_lo, p.j_hi));
        let rows: Vec<RegressionRow> = trees.into_iter().flatten().collect();
        let mut csv = Vec::new();
        write_regression_csv(&mut csv, &rows, slope, stderr)?;
        let mut out = Outcome::default();
        out.checks.push(slope_check("dims.box_slope", ctx, slope, stderr, expected, p.tolerance));
        out.observations =
            rows.iter().map(|r| Observation::new("packing_count", r.sample_id, r.delta, r.packing_count as f64)).collect();
        out.tables.push(Table { suffix: "regression", csv });
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LevelDimsParams {
    pub a: f64,
    /// Level as a fraction of each tree's height.
    pub level: f64,
    pub j_lo: u32,
    pub j_hi: u32,
    /// Defaults to the packing dimension of a level set.
    pub expected: Option<f64>,
    pub tolerance: f64,
}

impl Default for LevelDimsParams {
    fn default() -> Self {
        Self { a: 1.0, level: 0.5, j_lo: 2, j_hi: 8, expected: None, tolerance: 0.3 }
    }
}

/// Box-counting dimension of a level set via `Z(a - delta, delta)`.
pub struct LevelDims;

const LEVEL_HEADER: [&str; 9] = ["sample_id", "delta", "count", "ratio", "occupation", "zeta", "height", "slope", "stderr"];

impl ExperimentKind for LevelDims {
    fn name(&self) -> &'static str {
        "level-dims"
    }

    fn default_params(&self) -> Value {
        to_value(LevelDimsParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: LevelDimsParams = ctx.config.params()?;
        check_octaves(self.name(), p.j_lo, p.j_hi)?;
        if !(p.level > 0.0 && p.level < 1.0) {
            return Err(schema_err(self.name(), "level must lie in (0, 1)"));
        }
        let expected = match p.expected {
            Some(x) => x,
            None => ctx.mechanism.theoretical_dims(0.0, 1)?.dim_p_level,
        };
        let m = &ctx.mechanism;
        let trees = collect(map_indexed(ctx.config.samples, |i| {
            let e = tree(ctx, p.a, i)?;
            let grid = dyadic_grid(e.height(), p.j_lo, p.j_hi);
            let v = grid.iter().map(|&d| m.solve_v(d)).collect::<levyforest::Result<Vec<f64>>>()?;
            let covers = level_set_covering(&e, p.level * e.height(), &grid, &v)?;
            Ok((e.zeta(), e.height(), covers))
        }))?;
        let logs: Vec<Vec<f64>> = trees
            .iter()
            .map(|(_, _, c)| inner_octaves(&c.iter().map(|r| ln_count(r.count)).collect::<Vec<_>>()).to_vec())
            .collect();
        let (slope, stderr) = pooled_slope(&logs, &exponents(p.j_lo, p.j_hi));
        let mut out = Outcome::default();
        out.checks.push(slope_check("level-dims.box_slope", ctx, slope, stderr, expected, p.tolerance));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(LEVEL_HEADER).map_err(csv_err)?;
        for (i, (zeta, height, covers)) in trees.iter().enumerate() {
            for LevelCover { delta, count, ratio, occupation } in covers {
                w.write_record([
                    i.to_string(),
                    delta.to_string(),
                    count.to_string(),
                    ratio.to_string(),
                    occupation.to_string(),
                    zeta.to_string(),
                    height.to_string(),
                    String::new(),
                    String::new(),
                ])
                .map_err(csv_err)?;
                out.observations.push(Observation::new("count", i, *delta, *count as f64));
                out.observations.push(Observation::new("ratio", i, *delta, *ratio));
            }
        }
        let summary = ["summary".to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), String::new(), slope.to_string(), stderr.to_string()];
        w.write_record(summary).map_err(csv_err)?;
        out.tables.push(Table { suffix: "regression", csv: w.into_inner().map_err(|e| csv_err(e.into_error().into()))? });
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovtParams {
    pub a: f64,
    pub j_lo: u32,
    pub j_hi: u32,
    /// Required fraction of (tree, delta) pairs inside both bounds.
    pub min_fraction: f64,
}

impl Default for CovtParams {
    fn default() -> Self {
        Self { a: 1.0, j_lo: 3, j_hi: 7, min_fraction: 0.95 }
    }
}

/// Covering-number bounds `v(2 delta) zeta / (4 delta)` and `12 v(delta / 6) zeta / delta`.
pub struct Covt;

const COVT_HEADER: [&str; 8] =
    ["sample_id", "delta", "lower_bound", "packing_at_2delta", "upper_bound", "cover_at_delta_over_3", "lower_ok", "upper_ok"];

impl ExperimentKind for Covt {
    fn name(&self) -> &'static str {
        "covt"
    }

    fn default_params(&self) -> Value {
        to_value(CovtParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: CovtParams = ctx.config.params()?;
        if p.j_hi < p.j_lo || p.j_hi > 40 {
            return Err(schema_err(self.name(), "need j_lo <= j_hi <= 40"));
        }
        let checks = collect(map_indexed(ctx.config.samples, |i| {
            let e = tree(ctx, p.a, i)?;
            check_covt_bounds(&e, &ctx.mechanism, &dyadic_grid(e.height(), p.j_lo, p.j_hi))
        }))?;
        let total: usize = checks.iter().map(Vec::len).sum();
        let passed = checks.iter().flatten().filter(|c| c.pass()).count();
        let fraction = passed as f64 / total as f64;
        let mut out = Outcome::default();
        out.checks.push(
            TestReport::new("covt.bounds", fraction, fraction >= p.min_fraction, total, ctx.config.seed)
                .detail("min_fraction", p.min_fraction),
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COVT_HEADER).map_err(csv_err)?;
        for (i, rows) in checks.iter().enumerate() {
            for c in rows {
                let CovtCheck { delta, lower_bound, packing_at_2delta, upper_bound, cover_at_delta_over_3, lower_ok, upper_ok } = *c;
                w.write_record([
                    i.to_string(),
                    delta.to_string(),
                    lower_bound.to_string(),
                    packing_at_2delta.to_string(),
                    upper_bound.to_string(),
                    cover_at_delta_over_3.to_string(),
                    lower_ok.to_string(),
                    upper_ok.to_string(),
                ])
                .map_err(csv_err)?;
                out.observations.push(Observation::new("packing_at_2delta", i, delta, packing_at_2delta as f64));
                out.observations.push(Observation::new("lower_bound", i, delta, lower_bound));
                out.observations.push(Observation::new("cover_at_delta_over_3", i, delta, cover_at_delta_over_3 as f64));
                out.observations.push(Observation::new("upper_bound", i, delta, upper_bound));
            }
        }
        out.tables.push(Table { suffix: "bounds", csv: w.into_inner().map_err(|e| csv_err(e.into_error().into()))? });
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}
