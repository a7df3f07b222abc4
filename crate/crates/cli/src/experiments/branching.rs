use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use levyforest::levy_sampler::{branching_moment_check, ray_knight_samples};
use levyforest::stattests::{
    laplace_compare, mean, palm_spine_test, rerooting_invariance_test, Functional, RerootRule, TestReport,
};

use super::{schema_err, to_value, ExperimentKind, Observation, Outcome, RunContext};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchingParams {
    pub a: f64,
    pub eps: f64,
    /// Accepted range of `E Z(a, eps) / (v(eps) E l^a)`.
    pub ratio_range: [f64; 2],
    /// Accepted range of the conditional variance-to-mean ratio.
    pub dispersion_range: [f64; 2],
}

impl Default for BranchingParams {
    fn default() -> Self {
        Self { a: 1.0, eps: 0.25, ratio_range: [0.9, 1.1], dispersion_range: [0.8, 1.25] }
    }
}

fn within(x: f64, [lo, hi]: [f64; 2]) -> bool {
    lo <= x && x <= hi
}

/// Subtrees above level `a` reaching `a + eps` against the local time at `a`.
pub struct Branching;

impl ExperimentKind for Branching {
    fn name(&self) -> &'static str {
        "branching"
    }

    fn default_params(&self) -> Value {
        to_value(BranchingParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: BranchingParams = ctx.config.params()?;
        let (n, samples, seed) = (ctx.config.n, ctx.config.samples, ctx.config.seed);
        let r = branching_moment_check(&ctx.mechanism, p.a, p.eps, n, samples, seed)?;
        let ratio = r.ratio / r.v_eps;
        let mut out = Outcome::default();
        out.checks.push(
            TestReport::new("branching.ratio", ratio, !r.degenerate && within(ratio, p.ratio_range), samples, seed)
                .with_ci((r.ci.0 / r.v_eps, r.ci.1 / r.v_eps))
                .detail("v_eps", r.v_eps),
        );
        out.checks.push(TestReport::new(
            "branching.dispersion",
            r.dispersion,
            !r.degenerate && within(r.dispersion, p.dispersion_range),
            samples,
            seed,
        ));
        for (i, (&c, &l)) in r.counts.iter().zip(&r.local_times).enumerate() {
            out.records.push(json!({ "sample_id": i, "count": c, "local_time": l }));
            out.observations.push(Observation::new("count", i, l, c as f64));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayKnightParams {
    /// Initial mass.
    pub r: f64,
    pub a: f64,
    pub lambdas: Vec<f64>,
    /// Largest accepted `|E exp(-lambda Y_a) - exp(-r u_a(lambda))|`.
    pub tolerance: f64,
}

impl Default for RayKnightParams {
    fn default() -> Self {
        Self { r: 1.0, a: 1.0, lambdas: vec![1.0], tolerance: 0.005 }
    }
}

/// Total local time at level `a` of a forest of initial mass `r`.
pub struct RayKnight;

impl ExperimentKind for RayKnight {
    fn name(&self) -> &'static str {
        "rayknight"
    }

    fn default_params(&self) -> Value {
        to_value(RayKnightParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: RayKnightParams = ctx.config.params()?;
        if p.lambdas.is_empty() || p.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(schema_err(self.name(), "lambdas must be a non-empty list of positive numbers"));
        }
        let (n, seed) = (ctx.config.n, ctx.config.seed);
        let m = &ctx.mechanism;
        let ys = ray_knight_samples(m, p.r, n, p.a, ctx.config.samples, seed)?;
        let predict = |l: f64| (-p.r * m.solve_u(p.a, l)).exp();
        let mut out = Outcome::default();
        for &l in &p.lambdas {
            let emp = mean(&ys.iter().map(|y| (-l * y).exp()).collect::<Vec<_>>());
            let want = predict(l);
            let gap = (emp - want).abs();
            out.checks.push(
                TestReport::new(format!("rayknight.laplace[{l}]"), gap, gap <= p.tolerance, ys.len(), seed)
                    .detail("empirical", emp)
                    .detail("predicted", want),
            );
            out.observations.push(Observation::new("empirical", 0, l, emp));
            out.observations.push(Observation::new("predicted", 0, l, want));
        }
        if ys.len() >= 1000 {
            out.diagnostics.push(laplace_compare(&ys, &predict, &p.lambdas, seed)?);
        }
        out.records = ys.iter().enumerate().map(|(i, y)| json!({ "forest": i, "local_time": y })).collect();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PalmParams {
    pub a: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Largest accepted distance of the spine mean from its target.
    pub mean_tolerance: f64,
}

impl Default for PalmParams {
    fn default() -> Self {
        Self { a: 0.5, eps: 0.25, alpha: 0.01, mean_tolerance: 0.4 }
    }
}

/// Subtrees grafted on the spine of a local-time-typical vertex.
pub struct Palm;

impl ExperimentKind for Palm {
    fn name(&self) -> &'static str {
        "palm"
    }

    fn default_params(&self) -> Value {
        to_value(PalmParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: PalmParams = ctx.config.params()?;
        let (n, samples, seed) = (ctx.config.n, ctx.config.samples, ctx.config.seed);
        let r = palm_spine_test(&ctx.mechanism, p.a, p.eps, n, samples, seed, p.alpha)?;
        let spine: Vec<f64> = r.counts.iter().map(|&c| c as f64).collect();
        let m = mean(&spine);
        let mut out = Outcome::default();
        out.checks.push(
            TestReport::new("palm.spine_mean", m, (m - r.target_mean).abs() <= p.mean_tolerance, samples, seed)
                .detail("target", r.target_mean),
        );
        let mut dispersion = r.dispersion.clone();
        dispersion.name = "palm.spine_dispersion".into();
        out.checks.push(dispersion);
        let mut control = r.control.clone();
        control.name = "palm.negative_control_rejected".into();
        control.pass = !r.control.pass;
        out.checks.push(control);
        out.diagnostics.push(r.report.clone());
        for (series, counts) in [("spine", &r.counts), ("control", &r.control_counts)] {
            let top = counts.iter().copied().max().unwrap_or(0);
            let mut hist = vec![0usize; top as usize + 1];
            for &c in counts.iter() {
                hist[c as usize] += 1;
            }
            for (k, &h) in hist.iter().enumerate() {
                out.observations.push(Observation::new(series, 0, k as f64, h as f64 / counts.len().max(1) as f64));
            }
        }
        for (i, (c, k)) in r.counts.iter().zip(&r.control_counts).enumerate() {
            out.records.push(json!({ "sample_id": i, "spine_count": c, "control_count": k }));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RerootParams {
    pub a: f64,
    pub functionals: Vec<Functional>,
    pub rule: RerootRule,
    pub alpha: f64,
    /// `false` for a negative control that should be rejected.
    pub expect_invariance: bool,
}

impl Default for RerootParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            functionals: vec![
                Functional::Height,
                Functional::LocalTimeMass { level: 0.5, eps: 0.1 },
                Functional::NetCount { delta: 0.25 },
            ],
            rule: RerootRule::Uniform,
            alpha: 0.01,
            expect_invariance: true,
        }
    }
}

/// Functionals of the tree before and after re-rooting at a random point.
pub struct Reroot;

impl ExperimentKind for Reroot {
    fn name(&self) -> &'static str {
        "reroot"
    }

    fn default_params(&self) -> Value {
        to_value(RerootParams::default())
    }

    fn run(&self, ctx: &RunContext) -> Result<Outcome> {
        let p: RerootParams = ctx.config.params()?;
        if p.functionals.is_empty() {
            return Err(schema_err(self.name(), "functionals must not be empty"));
        }
        let (n, samples, seed) = (ctx.config.n, ctx.config.samples, ctx.config.seed);
        let r = rerooting_invariance_test(&ctx.mechanism, p.a, n, &p.functionals, samples, p.rule, seed, p.alpha)?;
        let mut out = Outcome::default();
        let mut gate = r.weighted.clone();
        gate.name = if p.expect_invariance { "reroot.invariance".into() } else { "reroot.negative_control_rejected".into() };
        gate.pass = r.weighted.pass == p.expect_invariance;
        out.checks.push(gate);
        out.diagnostics.push(r.unweighted.clone());
        for (i, t) in r.per_functional.iter().enumerate() {
            out.observations.push(Observation::new("p_value", i, i as f64, t.p_value.unwrap_or(t.statistic)));
            out.diagnostics.push(t.clone());
        }
        Ok(out)
    }
}
