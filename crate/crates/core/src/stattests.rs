//! Statistical tests used by the experiments: Poisson dispersion, one- and
//! two-sample Kolmogorov–Smirnov (optionally weighted), percentile bootstrap,
//! Laplace-transform comparison, and the Palm and re-rooting batteries.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::coded_tree::Excursion;
use crate::error::{Error, Result};
use crate::fractal::net_count;
use crate::galton_watson::{spine_sample, GrowOptions, SamplerRegistry};
use crate::levy_sampler::discretize;
use crate::mechanism::BranchingMechanism;
use crate::parallel::map_indexed;
use crate::rng::{seeded, task_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci: Option<(f64, f64)>,
    pub pass: bool,
    pub sample_size: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl TestReport {
    pub fn new(name: impl Into<String>, statistic: f64, pass: bool, sample_size: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            statistic,
            p_value: None,
            ci: None,
            pass,
            sample_size,
            seed,
            config_digest: None,
            details: BTreeMap::new(),
        }
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p_value = Some(p);
        self
    }

    pub fn with_ci(mut self, ci: (f64, f64)) -> Self {
        self.ci = Some(ci);
        self
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn to_ndjson(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Index of dispersion `sum (x - mean)^2 / mean` against chi-square with
/// `n - 1` degrees of freedom, two-sided at level `alpha`.
pub fn poisson_dispersion(counts: &[u64], alpha: f64, seed: u64) -> Result<TestReport> {
    if counts.len() < 30 {
        return Err(Error::Degenerate(format!("need at least 30 counts, got {}", counts.len())));
    }
    let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let m = mean(&x);
    if m == 0.0 {
        return Err(Error::Degenerate("all counts are zero".into()));
    }
    let stat = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / m;
    let df = (x.len() - 1) as f64;
    let chi = ChiSquared::new(df).expect("positive df");
    let cdf = chi.cdf(stat);
    let p = (2.0 * cdf.min(1.0 - cdf)).min(1.0);
    Ok(TestReport::new("poisson_dispersion", stat / df, p >= alpha, x.len(), seed)
        .with_p(p)
        .detail("mean", m)
        .detail("variance", variance(&x)))
}

/// Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = f64::from(k);
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Asymptotic KS p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_tail((s + 0.12 + 0.11 / s) * d)
}

/// Two-sample KS statistic and p-value with weights; the effective sample
/// sizes are Kish's `(sum w)^2 / sum w^2`.
pub fn weighted_ks_two_sample(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64]) -> (f64, f64) {
    let sort = |v: &[f64], w: &[f64]| {
        let mut p: Vec<(f64, f64)> = v.iter().copied().zip(w.iter().copied()).collect();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = w.iter().sum();
        (p, total)
    };
    let (px, tx) = sort(x, wx);
    let (py, ty) = sort(y, wy);
    let (mut i, mut j) = (0, 0);
    let (mut fx, mut fy, mut d) = (0.0f64, 0.0f64, 0.0f64);
    while i < px.len() || j < py.len() {
        let t = match (px.get(i), py.get(j)) {
            (Some(a), Some(b)) => a.0.min(b.0),
            (Some(a), None) => a.0,
            (None, Some(b)) => b.0,
            (None, None) => break,
        };
        while i < px.len() && px[i].0 <= t {
            fx += px[i].1 / tx;
            i += 1;
        }
        while j < py.len() && py[j].0 <= t {
            fy += py[j].1 / ty;
            j += 1;
        }
        d = d.max((fx - fy).abs());
    }
    let kish = |w: &[f64]| {
        let s: f64 = w.iter().sum();
        s * s / w.iter().map(|v| v * v).sum::<f64>()
    };
    let (nx, ny) = (kish(wx), kish(wy));
    (d, ks_p_value(d, nx * ny / (nx + ny)))
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> (f64, f64) {
    weighted_ks_two_sample(x, &vec![1.0; x.len()], y, &vec![1.0; y.len()])
}

/// One-sample KS statistic and p-value against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(x: &[f64], cdf: F) -> (f64, f64) {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &xi) in v.iter().enumerate() {
        let f = cdf(xi);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    (d, ks_p_value(d, n))
}

/// Percentile bootstrap interval of `stat` at confidence `level`.
pub fn bootstrap_ci<T: Clone, F: Fn(&[T]) -> f64>(data: &[T], stat: F, resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if data.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = seeded(seed);
    let mut buf: Vec<T> = data.to_vec();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = data[rng.random_range(0..data.len())].clone();
            }
            stat(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| stats[((p * (resamples as f64 - 1.0)).round() as usize).min(resamples - 1)];
    let tail = (1.0 - level) / 2.0;
    (q(tail), q(1.0 - tail))
}

/// Empirical Laplace transforms against predictions; passes when every
/// prediction lies inside its 99% bootstrap interval.
pub fn laplace_compare(draws: &[f64], predict: &dyn Fn(f64) -> f64, lambdas: &[f64], seed: u64) -> Result<TestReport> {
    if draws.len() < 1000 {
        return Err(Error::Degenerate(format!("need at least 1000 draws, got {}", draws.len())));
    }
    let mut report = TestReport::new("laplace_compare", 0.0, true, draws.len(), seed);
    let mut worst: f64 = 0.0;
    for (k, &l) in lambdas.iter().enumerate() {
        let e: Vec<f64> = draws.iter().map(|x| (-l * x).exp()).collect();
        let emp = mean(&e);
        let ci = bootstrap_ci(&e, mean, 1000, 0.99, seed.wrapping_add(k as u64));
        let want = predict(l);
        // a degenerate sample has a zero-width interval; allow rounding only
        let inside = want >= ci.0 - 1e-12 && want <= ci.1 + 1e-12;
        report.pass &= inside;
        worst = worst.max((emp - want).abs());
        report = report
            .detail(&format!("empirical[{l}]"), emp)
            .detail(&format!("predicted[{l}]"), want)
            .detail(&format!("ci_lo[{l}]"), ci.0)
            .detail(&format!("ci_hi[{l}]"), ci.1);
    }
    report.statistic = worst;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalmReport {
    pub report: TestReport,
    pub dispersion: TestReport,
    /// Counts along the spine.
    pub counts: Vec<u64>,
    /// Negative control: all subtrees from level `a` reaching `a + eps`.
    pub control_counts: Vec<u64>,
    pub control: TestReport,
    pub target_mean: f64,
}

/// Subtrees grafted on the ancestral line of an `l^a`-typical vertex with
/// height at least `eps` are Poisson with mean `2 beta a v(eps)` (quadratic
/// case). The vertex is the tip of a size-biased spine to generation `a n`.
pub fn palm_spine_test(
    m: &BranchingMechanism,
    a: f64,
    eps: f64,
    n: u32,
    samples: usize,
    seed: u64,
    alpha: f64,
) -> Result<PalmReport> {
    if !m.is_quadratic() {
        return Err(Error::Unsupported("palm test needs a quadratic mechanism".into()));
    }
    if !(eps > 0.0 && eps < a) {
        return Err(Error::Unsupported(format!("need 0 < eps < a, got eps={eps}, a={a}")));
    }
    let (off, norm) = discretize(m, n)?;
    let tip_gen = norm.generation(a);
    let level = f64::from(tip_gen) * norm.height_scale;
    let depth = ((level + eps) * f64::from(n) - 1e-9).ceil() as u32 + 1;
    let opts = GrowOptions { node_cap: 50_000_000, depth_cap: Some(depth) };
    let slack = 1e-9 * eps;
    let rows: Vec<Result<(u64, u64)>> = map_indexed(samples, |i| {
        let mut rng = task_rng(seed, i as u64);
        let st = spine_sample(&off, tip_gen, opts, &mut rng)?;
        let e = st.tree.to_excursion(norm.height_scale, norm.time_scale)?;
        let s = st.tree.first_visit_times()[st.tip()] as f64 * norm.time_scale;
        let on_spine = e.ancestral_decomposition(s.min(e.zeta()))?.iter().filter(|x| x.peak >= eps - slack).count();
        let control = e.count_z(level, eps);
        Ok((on_spine as u64, control as u64))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let counts: Vec<u64> = rows.iter().map(|r| r.0).collect();
    let control_counts: Vec<u64> = rows.iter().map(|r| r.1).collect();
    let target = 2.0 * m.beta() * level * m.solve_v(eps)?;
    let x: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mu = mean(&x);
    let dispersion = poisson_dispersion(&counts, alpha, seed)?;
    let ci = bootstrap_ci(&x, mean, 1000, 1.0 - alpha, seed ^ 0x9A1);
    // pgf of Poisson(target) at lambda: exp(-target (1 - e^{-lambda}))
    let pgf = laplace_compare(&x, &|l: f64| (-target * (1.0 - (-l).exp())).exp(), &[0.5, 1.0, 2.0], seed ^ 0x9A2)?;
    let mean_ok = (mu / target - 1.0).abs() <= 0.1;
    let report = TestReport::new("palm_spine", mu, mean_ok && dispersion.pass && pgf.pass, samples, seed)
        .with_ci(ci)
        .detail("target_mean", target)
        .detail("dispersion_p", dispersion.p_value.unwrap_or(f64::NAN))
        .detail("pgf_max_gap", pgf.statistic)
        .detail("pgf_pass", f64::from(u8::from(pgf.pass)));
    let mut control = poisson_dispersion(&control_counts, alpha, seed)?;
    control.name = "palm_negative_control".into();
    Ok(PalmReport { report, dispersion, counts, control_counts, control, target_mean: target })
}

/// Scalar functionals compared by the re-rooting battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Functional {
    Height,
    /// Occupation estimate of local time at `level * height`, divided by `zeta`.
    LocalTimeMass { level: f64, eps: f64 },
    /// Size of the `delta`-net.
    NetCount { delta: f64 },
}

impl Functional {
    pub fn eval(&self, e: &Excursion) -> f64 {
        match *self {
            Functional::Height => e.height(),
            Functional::LocalTimeMass { level, eps } => {
                let h = e.height();
                let a = level * h;
                let w = eps * h;
                e.occupation(a - w, a) / w / e.zeta()
            }
            Functional::NetCount { delta } => net_count(e, delta) as f64,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Functional::Height => "height".into(),
            Functional::LocalTimeMass { level, .. } => format!("local_time_mass[{level}]"),
            Functional::NetCount { delta } => format!("net_count[{delta}]"),
        }
    }
}

/// Where the re-rooted ensemble puts its new root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerootRule {
    /// A uniform contour corner, i.e. a grid time drawn from the mass measure.
    Uniform,
    /// The time of the highest vertex (negative control).
    HighestLeaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerootReport {
    /// Pass flag of the zeta-weighted battery.
    pub weighted: TestReport,
    pub unweighted: TestReport,
    pub per_functional: Vec<TestReport>,
}

/// Diameter of a coded tree: `max_{s<t} g(s) + g(t) - 2 min_{[s,t]} g`.
pub fn diameter(e: &Excursion) -> f64 {
    diameter_of(e.heights())
}

fn diameter_of(h: &[f64]) -> f64 {
    // max over s <= u <= t of g(s) - 2 g(u) + g(t); grid nodes suffice
    let mut best_s = f64::NEG_INFINITY; // max g(s) for s <= current
    let mut best_su = f64::NEG_INFINITY; // max g(s) - 2 g(u) for s <= u <= current
    let mut d = 0.0f64;
    for &x in h {
        best_s = best_s.max(x);
        best_su = best_su.max(best_s - 2.0 * x);
        d = d.max(best_su + x);
    }
    d
}

/// Compares functionals of original trees and of the same trees re-rooted
/// according to `rule`, on trees conditioned on `diam > 2 a` (an event that
/// does not depend on the root). Trees alternate between the two ensembles.
#[allow(clippy::too_many_arguments)]
pub fn rerooting_invariance_test(
    m: &BranchingMechanism,
    a: f64,
    n: u32,
    functionals: &[Functional],
    samples: usize,
    rule: RerootRule,
    seed: u64,
    alpha: f64,
) -> Result<RerootReport> {
    let (off, norm) = discretize(m, n)?;
    let reg = SamplerRegistry::default();
    let sampler = reg.get("exact")?;
    let opts = GrowOptions { node_cap: 2_000_000, depth_cap: None };
    let gen = norm.generation(a);
    let rows: Vec<Result<(Vec<f64>, f64)>> = map_indexed(samples, |i| {
        let mut rng = task_rng(seed, i as u64);
        loop {
            let t = sampler.sample(&off, gen, opts, 1_000_000, &mut rng)?.tree;
            let e = t.to_excursion(norm.height_scale, norm.time_scale)?;
            if diameter(&e) <= 2.0 * a {
                continue;
            }
            let e = if i % 2 == 1 {
                let s0 = match rule {
                    RerootRule::Uniform => e.time_of(rng.random_range(0..e.steps())),
                    RerootRule::HighestLeaf => e.time_of(e.argmax()),
                };
                e.reroot(s0)?
            } else {
                e
            };
            return Ok((functionals.iter().map(|f| f.eval(&e)).collect(), e.zeta()));
        }
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let k = functionals.len().max(1) as f64;
    let level = alpha / k;
    let mut per = Vec::new();
    let (mut w_pass, mut u_pass) = (true, true);
    let (mut w_min_p, mut u_min_p) = (1.0f64, 1.0f64);
    for (j, f) in functionals.iter().enumerate() {
        let split = |odd: bool| -> (Vec<f64>, Vec<f64>) {
            rows.iter().enumerate().filter(|(i, _)| (i % 2 == 1) == odd).map(|(_, r)| (r.0[j], r.1)).unzip()
        };
        let (x, wx) = split(false);
        let (y, wy) = split(true);
        let (du, pu) = ks_two_sample(&x, &y);
        let (dw, pw) = weighted_ks_two_sample(&x, &wx, &y, &wy);
        w_pass &= pw >= level;
        u_pass &= pu >= level;
        w_min_p = w_min_p.min(pw);
        u_min_p = u_min_p.min(pu);
        per.push(
            TestReport::new(format!("reroot_ks[{}]", f.label()), dw, pw >= level, rows.len(), seed)
                .with_p(pw)
                .detail("unweighted_d", du)
                .detail("unweighted_p", pu),
        );
    }
    let weighted = TestReport::new("reroot_weighted", w_min_p, w_pass, rows.len(), seed)
        .with_p((w_min_p * k).min(1.0))
        .detail("bonferroni_level", level);
    let unweighted = TestReport::new("reroot_unweighted", u_min_p, u_pass, rows.len(), seed)
        .with_p((u_min_p * k).min(1.0))
        .detail("bonferroni_level", level);
    Ok(RerootReport { weighted, unweighted, per_functional: per })
}

/// Least-squares slope of `y` on `x` with its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, f64::INFINITY);
    }
    let slope = sxy / sxx;
    let resid: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let stderr = if n > 2.0 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, stderr)
}
