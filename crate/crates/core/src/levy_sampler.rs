//! Levy-tree approximants from rescaled Galton–Watson trees, and Monte Carlo
//! checks of the tail, Ray–Knight, branching and local-time identities.
//!
//! Discretization at scale `n`: one generation is `1/n` in height, a unit of
//! initial mass is `p` ancestors, and one contour step lasts `1/(2 n p)`.
//! For `psi(u) = beta u^2` the offspring law is geometric(1/2) with
//! `p = n / beta`; for `psi(u) = u^gamma` it is the stable law with
//! generating function `s + (1-s)^gamma / gamma` and `p = (n/gamma)^{1/(gamma-1)}`.
//! Both choices make `p P(h >= a n) -> v(a)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coded_tree::Excursion;
use crate::error::{Error, Result};
use crate::galton_watson::{
    extinction_time, sample_tree, GrowOptions, OffspringDistribution, SamplerRegistry, UlamTree,
};
use crate::mechanism::{BranchingMechanism, MechanismSpec};
use crate::parallel::map_indexed;
use crate::rng::{seeded, task_rng, Rng};
use crate::stattests::bootstrap_ci;

/// Samples per seeded task in bulk Monte Carlo loops.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub n: u32,
    /// Height of one generation.
    pub height_scale: f64,
    /// Number of ancestors per unit of initial mass.
    pub population: f64,
    /// Duration of one contour step.
    pub time_scale: f64,
}

impl Normalization {
    /// First generation at or above height `a`.
    pub fn generation(&self, a: f64) -> u32 {
        (a * f64::from(self.n) - 1e-9).ceil().max(0.0) as u32
    }
}

/// The offspring law and scaling constants approximating `m` at scale `n`.
pub fn discretize(m: &BranchingMechanism, n: u32) -> Result<(OffspringDistribution, Normalization)> {
    if n == 0 {
        return Err(Error::Unsupported("scale n must be positive".into()));
    }
    let nf = f64::from(n);
    let (off, population) = if m.is_quadratic() && m.alpha() == 0.0 {
        (OffspringDistribution::geometric(), nf / m.beta())
    } else if let Some(g) = m.normalized_stable_exponent() {
        (OffspringDistribution::stable(g)?, (nf / g).powf(1.0 / (g - 1.0)))
    } else {
        return Err(Error::Unsupported(
            "tree sampling supports psi(u) = beta u^2 and psi(u) = u^gamma only".into(),
        ));
    };
    let norm = Normalization { n, height_scale: 1.0 / nf, population, time_scale: 1.0 / (2.0 * nf * population) };
    Ok((off, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Conditioning {
    None,
    HeightAbove { a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mechanism: MechanismSpec,
    pub n: u32,
    pub conditioning: Conditioning,
    pub seed: u64,
    pub sampler: String,
    pub normalization: Normalization,
}

#[derive(Debug, Clone)]
pub struct TreeSample {
    pub excursion: Excursion,
    pub tree: UlamTree,
    pub provenance: Provenance,
}

/// A tree under `N(· | h > a)` at scale `n`, drawn with the exact
/// conditioned sampler.
pub fn sample_levy_tree(m: &BranchingMechanism, n: u32, a: f64, seed: u64) -> Result<TreeSample> {
    sample_levy_tree_with(m, n, Conditioning::HeightAbove { a }, "exact", GrowOptions::default(), seed)
}

pub fn sample_levy_tree_with(
    m: &BranchingMechanism,
    n: u32,
    conditioning: Conditioning,
    sampler: &str,
    opts: GrowOptions,
    seed: u64,
) -> Result<TreeSample> {
    let (off, norm) = discretize(m, n)?;
    let mut rng = seeded(seed);
    let tree = match &conditioning {
        Conditioning::None => sample_tree(&off, opts, &mut rng)?,
        Conditioning::HeightAbove { a } => {
            if !(*a > 0.0) {
                return Err(Error::Unsupported(format!("conditioning height {a} must be positive")));
            }
            let reg = SamplerRegistry::default();
            reg.get(sampler)?.sample(&off, norm.generation(*a), opts, 1_000_000, &mut rng)?.tree
        }
    };
    let excursion = tree.to_excursion(norm.height_scale, norm.time_scale)?;
    let provenance = Provenance {
        mechanism: MechanismSpec::from(m),
        n,
        conditioning,
        seed,
        sampler: sampler.to_string(),
        normalization: norm,
    };
    Ok(TreeSample { excursion, tree, provenance })
}

/// `n P(h(θ) >= n)` over `samples` unconditioned trees.
pub fn height_tail_check(off: &OffspringDistribution, n: u32, samples: usize, seed: u64) -> f64 {
    let tasks = samples.div_ceil(CHUNK);
    let hits: u64 = map_indexed(tasks, |t| {
        let mut rng = task_rng(seed, t as u64);
        let todo = CHUNK.min(samples - t * CHUNK);
        (0..todo).filter(|_| extinction_time(off, 1, n, &mut rng).is_none_or(|h| h >= n)).count() as u64
    })
    .into_iter()
    .sum();
    f64::from(n) * hits as f64 / samples as f64
}

/// Draws the height (in generations) of a tree conditioned on reaching
/// generation `g_min`, observed up to generation `g_max`; `None` in the
/// result means it is still alive at `g_max`.
fn conditioned_extinction(off: &OffspringDistribution, g_min: u32, g_max: u32, rng: &mut Rng) -> (Option<u32>, u64) {
    let mut proposals = 0;
    loop {
        proposals += 1;
        match extinction_time(off, 1, g_max, rng) {
            Some(h) if h < g_min => continue,
            other => return (other, proposals),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRatio {
    /// Empirical `P(h > b | h > a)`.
    pub ratio: f64,
    pub stderr: f64,
    /// Predicted `v(b) / v(a)`.
    pub predicted: f64,
    pub samples: usize,
    pub proposals: u64,
}

/// Empirical `P(h > b | h > a)` under the approximant at scale `n`.
pub fn conditional_tail_ratio(
    m: &BranchingMechanism,
    n: u32,
    a: f64,
    b: f64,
    samples: usize,
    seed: u64,
) -> Result<TailRatio> {
    let (off, norm) = discretize(m, n)?;
    let (ga, gb) = (norm.generation(a), norm.generation(b));
    let per_task: Vec<(u64, u64)> = map_indexed(samples.div_ceil(CHUNK), |t| {
        let mut rng = task_rng(seed, t as u64);
        let todo = CHUNK.min(samples - t * CHUNK);
        let (mut hits, mut props) = (0u64, 0u64);
        for _ in 0..todo {
            let (h, p) = conditioned_extinction(&off, ga, gb, &mut rng);
            props += p;
            hits += u64::from(h.is_none_or(|h| h >= gb));
        }
        (hits, props)
    });
    let hits: u64 = per_task.iter().map(|x| x.0).sum();
    let proposals: u64 = per_task.iter().map(|x| x.1).sum();
    let ratio = hits as f64 / samples as f64;
    Ok(TailRatio {
        ratio,
        stderr: (ratio * (1.0 - ratio) / samples as f64).sqrt(),
        predicted: m.solve_v(b)? / m.solve_v(a)?,
        samples,
        proposals,
    })
}

/// Generation sizes of a forest of `p` trees at generations `floor(a n)`,
/// divided by `p`.
pub fn ray_knight_profile(off: &OffspringDistribution, p: u64, n: u32, a_grid: &[f64], rng: &mut Rng) -> Vec<f64> {
    let gens: Vec<u32> = a_grid.iter().map(|a| (a * f64::from(n) + 1e-9).floor().max(0.0) as u32).collect();
    let g_max = gens.iter().copied().max().unwrap_or(0);
    let mut z = Vec::with_capacity(g_max as usize + 1);
    let mut cur = p;
    z.push(cur);
    for _ in 0..g_max {
        cur = if cur == 0 { 0 } else { off.sample_sum(cur, rng) };
        z.push(cur);
    }
    gens.iter().map(|&g| z[g as usize] as f64 / p as f64).collect()
}

/// Draws of `Y = Z_{floor(a n)} / p` over independent forests started from
/// mass `r`, i.e. `p = r * population` ancestors.
pub fn ray_knight_samples(m: &BranchingMechanism, r: f64, n: u32, a: f64, forests: usize, seed: u64) -> Result<Vec<f64>> {
    let (off, norm) = discretize(m, n)?;
    let p = (r * norm.population).round().max(1.0) as u64;
    let chunks = map_indexed(forests.div_ceil(CHUNK), |t| {
        let mut rng = task_rng(seed, t as u64);
        let todo = CHUNK.min(forests - t * CHUNK);
        (0..todo).map(|_| ray_knight_profile(&off, p, n, &[a], &mut rng)[0]).collect::<Vec<f64>>()
    });
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingCheck {
    /// `mean Z(a, eps) / mean local time at a`.
    pub ratio: f64,
    pub ci: (f64, f64),
    pub v_eps: f64,
    /// Pooled within-bucket variance-to-mean ratio of `Z` given the local time.
    pub dispersion: f64,
    pub counts: Vec<u64>,
    pub local_times: Vec<f64>,
    pub degenerate: bool,
}

/// Time spent with height in `(lo, hi]` by the two traversals of edges whose
/// upper vertices are in generation `k`, per vertex.
fn band_time(k: u32, norm: &Normalization, lo: f64, hi: f64) -> f64 {
    let (y0, y1) = (f64::from(k - 1) * norm.height_scale, f64::from(k) * norm.height_scale);
    let overlap = (y1.min(hi) - y0.max(lo)).max(0.0);
    2.0 * norm.time_scale * overlap / norm.height_scale
}

/// Checks `E[Z(a, eps)] = v(eps) E[l^a]` on trees conditioned to reach
/// height `a - eps/8`, where `l^a` is the occupation estimator with window
/// `eps/8`.
///
/// Only the generation sizes up to just above `a` are simulated: given them,
/// each vertex of the first generation above `a` roots a subtree reaching
/// `a + eps` independently, so `Z(a, eps)` is a binomial thinning.
pub fn branching_moment_check(
    m: &BranchingMechanism,
    a: f64,
    eps: f64,
    n: u32,
    samples: usize,
    seed: u64,
) -> Result<BranchingCheck> {
    if !(eps > 0.0 && eps < a) {
        return Err(Error::Unsupported(format!("need 0 < eps < a, got eps={eps}, a={a}")));
    }
    let (off, norm) = discretize(m, n)?;
    let nf = f64::from(n);
    let window = eps / 8.0;
    let lo = a - window;
    let g_cond = (lo * nf + 1e-9).floor() as u32 + 1;
    let j = (a * nf + 1e-9).floor() as u32 + 1;
    let need = ((a + eps) * nf - f64::from(j) - 1e-9).ceil().max(0.0) as u32;
    let survive = off.height_tail(need)[need as usize];
    let band: Vec<u32> = (g_cond.max(1)..=j).collect();
    let rows: Vec<(u64, f64)> = map_indexed(samples, |i| {
        let mut rng = task_rng(seed, i as u64);
        loop {
            let mut cur = 1u64;
            let mut occ = 0.0;
            let mut zj = 0;
            for g in 1..=j {
                cur = off.sample_sum(cur, &mut rng);
                if cur == 0 {
                    break;
                }
                if band.contains(&g) {
                    occ += cur as f64 * band_time(g, &norm, lo, a);
                }
                if g == j {
                    zj = cur;
                }
            }
            if occ == 0.0 && zj == 0 {
                // did not reach the window
                continue;
            }
            let z = if zj == 0 {
                0
            } else {
                rand_distr::Distribution::sample(&rand_distr::Binomial::new(zj, survive).expect("p in [0,1]"), &mut rng)
            };
            return (z, occ / window);
        }
    });
    let counts: Vec<u64> = rows.iter().map(|r| r.0).collect();
    let local_times: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let v_eps = m.solve_v(eps)?;
    let mean_l = local_times.iter().sum::<f64>() / samples as f64;
    let mean_z = counts.iter().sum::<u64>() as f64 / samples as f64;
    let degenerate = mean_l == 0.0 || mean_z == 0.0;
    let ratio = if mean_l > 0.0 { mean_z / mean_l } else { 0.0 };
    let pairs: Vec<(f64, f64)> = counts.iter().zip(&local_times).map(|(&z, &l)| (z as f64, l)).collect();
    let ci = bootstrap_ci(
        &pairs,
        |s: &[(f64, f64)]| {
            let (zs, ls) = s.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            if ls > 0.0 { zs / ls } else { 0.0 }
        },
        1000,
        0.99,
        seed ^ 0xB007,
    );
    let dispersion = bucketed_dispersion(&counts, &local_times, 20);
    Ok(BranchingCheck { ratio, ci, v_eps, dispersion, counts, local_times, degenerate })
}

/// Pooled variance-to-mean ratio of `counts` given `covariate`: within each
/// quantile bucket of the covariate, the variance is the residual variance
/// of a least-squares line in the covariate, so the spread of the covariate
/// inside a bucket does not count as dispersion.
pub fn bucketed_dispersion(counts: &[u64], covariate: &[f64], buckets: usize) -> f64 {
    let mut idx: Vec<usize> = (0..counts.len()).collect();
    idx.sort_by(|&i, &j| covariate[i].total_cmp(&covariate[j]));
    let size = idx.len().div_ceil(buckets.max(1)).max(3);
    let (mut var_sum, mut mean_sum) = (0.0, 0.0);
    for chunk in idx.chunks(size) {
        if chunk.len() < 3 {
            continue;
        }
        let k = chunk.len() as f64;
        let z: Vec<f64> = chunk.iter().map(|&i| counts[i] as f64).collect();
        let l: Vec<f64> = chunk.iter().map(|&i| covariate[i]).collect();
        let mz = z.iter().sum::<f64>() / k;
        let ml = l.iter().sum::<f64>() / k;
        let sll: f64 = l.iter().map(|x| (x - ml).powi(2)).sum();
        let slz: f64 = l.iter().zip(&z).map(|(x, y)| (x - ml) * (y - mz)).sum();
        let slope = if sll > 0.0 { slz / sll } else { 0.0 };
        let rss: f64 = l.iter().zip(&z).map(|(x, y)| (y - mz - slope * (x - ml)).powi(2)).sum();
        var_sum += rss;
        mean_sum += (k - 2.0) * mz;
    }
    if mean_sum > 0.0 { var_sum / mean_sum } else { f64::NAN }
}

/// Occupation estimates of the local-time mass `<l^a, 1>` on a grid of levels.
pub fn local_time_cadlag_probe(e: &Excursion, levels: &[f64], eps: f64) -> Vec<f64> {
    levels.iter().map(|&a| if a > e.height() { 0.0 } else { e.occupation(a - eps, a) / eps }).collect()
}

/// Largest upward increment of a profile over the median absolute increment.
pub fn max_jump_ratio(profile: &[f64]) -> f64 {
    let mut inc: Vec<f64> = profile.windows(2).map(|w| w[1] - w[0]).collect();
    let up = inc.iter().copied().fold(0.0, f64::max);
    for x in inc.iter_mut() {
        *x = x.abs();
    }
    inc.sort_by(f64::total_cmp);
    let med = inc.get(inc.len() / 2).copied().unwrap_or(0.0);
    if med > 0.0 { up / med } else { f64::INFINITY }
}

/// `n(σ, eps) / v(eps)`: subtrees above the vertex at time `s` with height at
/// least `eps`, normalized.
pub fn infinite_branch_local_time(e: &Excursion, s: f64, eps_grid: &[f64], v_values: &[f64]) -> Result<Vec<f64>> {
    if eps_grid.len() != v_values.len() {
        return Err(Error::Unsupported("eps grid and v values differ in length".into()));
    }
    let tol = e.default_tol();
    let h = e.eval(s)?;
    let (l, r) = e.class_interval(s, tol);
    let comps = e.components_between(h + tol, l, r);
    Ok(eps_grid
        .iter()
        .zip(v_values)
        .map(|(&eps, &v)| comps.iter().filter(|c| c.peak >= eps - tol).count() as f64 / v)
        .collect())
}

/// Contour time of a vertex with the most children, on the sample's time scale.
pub fn max_degree_time(sample: &TreeSample) -> f64 {
    let t = &sample.tree;
    let best = (0..t.len()).max_by_key(|&v| (t.child_count(v), std::cmp::Reverse(v))).unwrap_or(0);
    t.first_visit_times()[best] as f64 * sample.provenance.normalization.time_scale
}

/// One NDJSON line per sampled tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub seed: u64,
    pub mechanism: MechanismSpec,
    pub n: u32,
    pub conditioning: Conditioning,
    pub height: f64,
    pub zeta: f64,
    pub stats: BTreeMap<String, f64>,
}

impl SampleRecord {
    pub fn from_sample(s: &TreeSample) -> Self {
        let mut stats = BTreeMap::new();
        stats.insert("nodes".to_string(), s.tree.len() as f64);
        stats.insert("generations".to_string(), f64::from(s.tree.height()));
        Self {
            seed: s.provenance.seed,
            mechanism: s.provenance.mechanism.clone(),
            n: s.provenance.n,
            conditioning: s.provenance.conditioning.clone(),
            height: s.excursion.height(),
            zeta: s.excursion.zeta(),
            stats,
        }
    }

    pub fn to_ndjson(&self) -> String {
        serde_json::to_string(self).expect("finite floats serialize")
    }
}
