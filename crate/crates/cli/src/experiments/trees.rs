use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use levyforest::coded_tree::Excursion;
use levyforest::galton_watson::{GrowOptions, SamplerRegistry};
use levyforest::levy_sampler::{sample_levy_tree, sample_levy_tree_with, Conditioning, SampleRecord};
use levyforest::metric::{gh_exact, gh_lower_diam, gh_upper_coding, subsample};
use levyforest::parallel::map_indexed;
use levyforest::rng::task_rng;
use levyforest::stattests::TestReport;

use super::{collect, schema_err, to_value, ExperimentKind, Observation, Outcome, RunContext};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleParams {
    pub conditioning: Conditioning,
    pub sampler: String,
    pub node_cap: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            conditioning: Conditioning::HeightAbove { a: 1.0 },
            sampler: "exact".into(),
            node_cap: GrowOptions::default().node_cap,
        }
    }
}

/// Independent trees, one NDJSON record each.
pub struct Sample;

impl ExperimentKind for Sample {
    fn name(&self) -> &'static str {
        "sample"
    }

    fn default_params(&self) -> Value {
        to_value(SampleParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: SampleParams = ctx.config.params()?;
        let known = SamplerRegistry::default().names();
        if !known.contains(&p.sampler.as_str()) {
            return Err(schema_err(self.name(), format!("unknown sampler `{}`, expected one of {}", p.sampler, known.join(", "))));
        }
        let opts = GrowOptions { node_cap: p.node_cap, ..GrowOptions::default() };
        let records = collect(map_indexed(ctx.config.samples, |i| {
            let s = sample_levy_tree_with(&ctx.mechanism, ctx.config.n, p.conditioning.clone(), &p.sampler, opts, ctx.task_seed(i))?;
            let mut r = SampleRecord::from_sample(&s);
            r.stats.insert("steps".into(), s.excursion.steps() as f64);
            Ok(r)
        }))?;
        let mut out = Outcome::default();
        if let Conditioning::HeightAbove { a } = p.conditioning {
            let low = records.iter().map(|r| r.height).fold(f64::INFINITY, f64::min);
            out.checks.push(
                TestReport::new("sample.conditioning", low, low >= a, records.len(), ctx.config.seed).detail("a", a),
            );
        }
        for (i, r) in records.iter().enumerate() {
            out.observations.push(Observation::new("height", i, i as f64, r.height));
            out.observations.push(Observation::new("zeta", i, i as f64, r.zeta));
        }
        out.records = records.into_iter().map(to_value).collect();
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhParams {
    pub a: f64,
    /// Sampled points per tree, root included.
    pub points: usize,
}

impl Default for GhParams {
    fn default() -> Self {
        Self { a: 1.0, points: 5 }
    }
}

/// Lower bound, exact distance and coding bound on pairs of subsampled trees.
pub struct Gh;

const GH_CAP: usize = 8;

fn unit_duration(e: &Excursion) -> levyforest::Result<Excursion> {
    Excursion::new(e.heights().to_vec(), 1.0)
}

impl ExperimentKind for Gh {
    fn name(&self) -> &'static str {
        "gh"
    }

    fn default_params(&self) -> Value {
        to_value(GhParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: GhParams = ctx.config.params()?;
        if !(2..=GH_CAP).contains(&p.points) {
            return Err(schema_err(self.name(), format!("points must lie in 2..={GH_CAP}")));
        }
        let (m, n, seed) = (&ctx.mechanism, ctx.config.n, ctx.config.seed);
        let rows = collect(map_indexed(ctx.config.samples, |i| -> levyforest::Result<[f64; 3]> {
            let g1 = unit_duration(&sample_levy_tree(m, n, p.a, ctx.task_seed(2 * i))?.excursion)?;
            let g2 = unit_duration(&sample_levy_tree(m, n, p.a, ctx.task_seed(2 * i + 1))?.excursion)?;
            let mut rng = task_rng(!seed, i as u64);
            let times: Vec<f64> =
                std::iter::once(0.0).chain((1..p.points).map(|_| rng.random::<f64>())).collect();
            let (a, b) = (subsample(&g1, &times)?, subsample(&g2, &times)?);
            Ok([gh_lower_diam(&a, &b), gh_exact(&a, &b, GH_CAP)?, gh_upper_coding(&g1, &g2)])
        }))?;
        let mut out = Outcome::default();
        let tol = 1e-12;
        let worst = rows.iter().map(|[lo, ex, hi]| (lo - ex).max(ex - hi)).fold(f64::NEG_INFINITY, f64::max);
        out.checks.push(TestReport::new("gh.sandwich", worst, worst <= tol, rows.len(), seed));
        for (i, [lo, ex, hi]) in rows.iter().enumerate() {
            out.records.push(serde_json::json!({ "pair": i, "lower": lo, "exact": ex, "upper": hi }));
            for (series, y) in [("lower", lo), ("exact", ex), ("upper", hi)] {
                out.observations.push(Observation::new(series, i, i as f64, *y));
            }
        }
        Ok(out)
    }
}
