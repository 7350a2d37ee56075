//! Resampling variance estimators: Efron's bootstrap of the full statistic,
//! the main-term bootstrap, moving-block resampling, and an exact
//! enumeration oracle for tiny samples.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomp::DecompContext;
use crate::error::{Error, Result};
use crate::fenwick::Fenwick;
use crate::normal;
use crate::rng;
use crate::ustat::{dense_ranks, eval_slice, rank_stat_from_ranks, Compensated, Sample, UStatSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMethod {
    Efron,
    #[serde(alias = "main_term", alias = "main-term")]
    MainTerm,
    #[serde(alias = "moving_block", alias = "moving-block")]
    MovingBlock,
    #[serde(rename = "exact", alias = "exact_oracle")]
    ExactOracle,
}

impl ResampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            ResampleMethod::Efron => "efron",
            ResampleMethod::MainTerm => "mainterm",
            ResampleMethod::MovingBlock => "movingblock",
            ResampleMethod::ExactOracle => "exact",
        }
    }
}

impl std::fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "efron" => Ok(ResampleMethod::Efron),
            "mainterm" => Ok(ResampleMethod::MainTerm),
            "movingblock" => Ok(ResampleMethod::MovingBlock),
            "exact" | "exactoracle" => Ok(ResampleMethod::ExactOracle),
            other => Err(Error::InvalidInput(format!("unknown resampling method '{other}'"))),
        }
    }
}

/// Method, replicate count and tuning of a resampling run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplingPlan {
    pub method: ResampleMethod,
    /// Replicates `B` (per block for moving-block resampling).
    pub replicates: usize,
    pub block: Option<usize>,
    /// Scale `h_n`; moving-block defaults to `n / b`.
    pub hn: Option<f64>,
    pub seed: u64,
}

impl ResamplingPlan {
    pub fn efron(replicates: usize, seed: u64) -> Self {
        Self {
            method: ResampleMethod::Efron,
            replicates,
            block: None,
            hn: None,
            seed,
        }
    }

    pub fn main_term(replicates: usize, seed: u64) -> Self {
        Self {
            method: ResampleMethod::MainTerm,
            ..Self::efron(replicates, seed)
        }
    }

    pub fn moving_block(replicates: usize, block: usize, hn: Option<f64>, seed: u64) -> Self {
        Self {
            method: ResampleMethod::MovingBlock,
            replicates,
            block: Some(block),
            hn,
            seed,
        }
    }

    pub fn exact_oracle() -> Self {
        Self {
            method: ResampleMethod::ExactOracle,
            replicates: 0,
            block: None,
            hn: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `h_n` used for a sample of size `n`.
    pub fn scale(&self, n: usize) -> f64 {
        match (self.hn, self.block) {
            (Some(h), _) => h,
            (None, Some(b)) => n as f64 / b as f64,
            (None, None) => 1.0,
        }
    }

    /// Checks the plan against sample size `n` and degree `m`.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if n < m {
            return Err(Error::InvalidInput(format!("sample size {n} below degree {m}")));
        }
        match self.method {
            ResampleMethod::ExactOracle => {
                if n > EXACT_MAX_N || m > EXACT_MAX_DEGREE {
                    return Err(Error::Size {
                        what: format!("exact bootstrap enumeration (n = {n}, m = {m})"),
                        work: (n as f64).powi(n as i32),
                        limit: (EXACT_MAX_N as f64).powi(EXACT_MAX_N as i32),
                    });
                }
            }
            _ if self.replicates < 2 => {
                return Err(Error::InvalidPlan(format!(
                    "at least 2 replicates are needed, got {}",
                    self.replicates
                )));
            }
            ResampleMethod::MovingBlock => {
                let b = self
                    .block
                    .ok_or_else(|| Error::InvalidPlan("moving-block resampling needs a block size".into()))?;
                if b <= m || b > n {
                    return Err(Error::InvalidPlan(format!("block size {b} must satisfy {m} < b <= {n}")));
                }
                let h = self.scale(n);
                if !(h > 0.0) || !h.is_finite() {
                    return Err(Error::InvalidPlan(format!("h_n must be positive, got {h}")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// A variance estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: ResamplingPlan,
    /// Zero for the exact oracle.
    pub mc_std_error: f64,
}

pub const EXACT_MAX_N: usize = 6;
pub const EXACT_MAX_DEGREE: usize = 3;

/// Sample variance (`B - 1` denominator) of replicate values and its Monte
/// Carlo standard error `sqrt((m4 - s⁴) / B)`.
pub fn replicate_variance(values: &[f64]) -> (f64, f64) {
    let b = values.len() as f64;
    let mut sum = Compensated::default();
    for &v in values {
        sum.add(v);
    }
    let mean = sum.total() / b;
    let mut m2 = Compensated::default();
    let mut m4 = Compensated::default();
    for &v in values {
        let d = (v - mean) * (v - mean);
        m2.add(d);
        m4.add(d * d);
    }
    let s2 = m2.total() / (b - 1.0);
    let m4 = m4.total() / b;
    let se = ((m4 - s2 * s2).max(0.0) / b).sqrt();
    (s2, se)
}

/// Evaluates the statistic on resampled positions of one base sample.
struct Evaluator<'a> {
    spec: &'a UStatSpec,
    values: &'a [f64],
    ranks: Option<(Vec<u32>, usize)>,
}

struct Scratch {
    idx: Vec<usize>,
    xs: Vec<f64>,
    rs: Vec<u32>,
    tree: Fenwick,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a UStatSpec, values: &'a [f64]) -> Self {
        let ranks = spec.rank_kind().map(|_| dense_ranks(values));
        Self { spec, values, ranks }
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            idx: Vec::with_capacity(self.values.len()),
            xs: Vec::with_capacity(self.values.len()),
            rs: Vec::with_capacity(self.values.len()),
            tree: Fenwick::new(self.ranks.as_ref().map_or(0, |r| r.1)),
        }
    }

    /// Statistic of the sequence `values[idx[0]], values[idx[1]], …`.
    fn eval(&self, s: &mut Scratch) -> Result<f64> {
        match (&self.ranks, self.spec.rank_kind()) {
            (Some((ranks, levels)), Some(kind)) => {
                s.rs.clear();
                s.rs.extend(s.idx.iter().map(|&i| ranks[i]));
                Ok(self.spec.kernel_scale() * rank_stat_from_ranks(kind, &s.rs, *levels, &mut s.tree))
            }
            _ => {
                s.xs.clear();
                s.xs.extend(s.idx.iter().map(|&i| self.values[i]));
                eval_slice(&s.xs, self.spec)
            }
        }
    }

    /// Replicate `k` drawn from `stream(seed, [k])`.
    fn replicate(&self, seed: u64, k: u64, s: &mut Scratch) -> Result<f64> {
        let n = self.values.len();
        let mut r = rng::stream(seed, &[k]);
        s.idx.clear();
        s.idx.extend((0..n).map(|_| r.random_range(0..n)));
        self.eval(s)
    }
}

/// Statistic values for replicates `first..first + count` of `values`.
fn replicate_values(spec: &UStatSpec, values: &[f64], seed: u64, first: u64, count: usize) -> Result<Vec<f64>> {
    let ev = Evaluator::new(spec, values);
    (0..count as u64)
        .into_par_iter()
        .map_init(|| ev.scratch(), |s, k| ev.replicate(seed, first + k, s))
        .collect()
}

/// Efron's bootstrap: the `k`-th resample takes `n` i.i.d. draws from the
/// sample (draw `p` occupies position `p`) using stream `(seed, [k])`.
pub fn efron_variance(sample: &Sample, spec: &UStatSpec, plan: &ResamplingPlan) -> Result<VarianceEstimate> {
    if plan.method != ResampleMethod::Efron {
        return Err(Error::InvalidPlan(format!("expected an efron plan, got {}", plan.method)));
    }
    plan.validate(sample.len(), spec.degree())?;
    let values = replicate_values(spec, sample.values(), plan.seed, 0, plan.replicates)?;
    let (value, se) = replicate_variance(&values);
    Ok(VarianceEstimate {
        value,
        method: *plan,
        mc_std_error: se,
    })
}

/// Exact bootstrap variance over all `n^n` equally likely resamples
/// (population variance), for `n <= 6` and degree `<= 3`.
pub fn exact_bootstrap_variance(sample: &Sample, spec: &UStatSpec) -> Result<VarianceEstimate> {
    let plan = ResamplingPlan::exact_oracle();
    let n = sample.len();
    plan.validate(n, spec.degree())?;
    let xs = sample.values();
    let mut idx = vec![0usize; n];
    let mut buf = vec![0.0; n];
    let mut stats = Vec::with_capacity(n.pow(n as u32));
    loop {
        for (b, &i) in buf.iter_mut().zip(&idx) {
            *b = xs[i];
        }
        stats.push(eval_slice(&buf, spec)?);
        // Odometer increment.
        let mut p = n;
        loop {
            if p == 0 {
                let mean = {
                    let mut acc = Compensated::default();
                    for &v in &stats {
                        acc.add(v);
                    }
                    acc.total() / stats.len() as f64
                };
                let mut acc = Compensated::default();
                for &v in &stats {
                    acc.add((v - mean) * (v - mean));
                }
                return Ok(VarianceEstimate {
                    value: acc.total() / stats.len() as f64,
                    method: plan,
                    mc_std_error: 0.0,
                });
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < n {
                break;
            }
            idx[p] = 0;
        }
    }
}

/// Bootstrap distribution of the main term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainTermBootstrap {
    /// `n⁻¹ Σ h₁* - n⁻¹ Σ h₁` per replicate.
    pub centered_means: Vec<f64>,
    pub variance: f64,
    pub mc_std_error: f64,
}

/// Resamples the projections `h_{1,i}(X_i)` i.i.d. from their empirical
/// distribution; replicate `k` uses stream `(seed, [k])`.
pub fn main_term_bootstrap(h1_values: &[f64], replicates: usize, seed: u64) -> Result<MainTermBootstrap> {
    let n = h1_values.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 values, got {n}")));
    }
    if replicates < 2 {
        return Err(Error::InvalidPlan(format!("at least 2 replicates are needed, got {replicates}")));
    }
    let nf = n as f64;
    let base = h1_values.iter().sum::<f64>() / nf;
    let centered_means: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, &[k]);
            let mut acc = 0.0;
            for _ in 0..n {
                acc += h1_values[r.random_range(0..n)];
            }
            acc / nf - base
        })
        .collect();
    let (variance, mc_std_error) = replicate_variance(&centered_means);
    Ok(MainTermBootstrap {
        centered_means,
        variance,
        mc_std_error,
    })
}

/// Main-term bootstrap variance of `U_n` with projections from a known model.
pub fn main_term_variance_estimate(ctx: &DecompContext, sample: &Sample, plan: &ResamplingPlan) -> Result<VarianceEstimate> {
    if plan.method != ResampleMethod::MainTerm {
        return Err(Error::InvalidPlan(format!("expected a main-term plan, got {}", plan.method)));
    }
    plan.validate(sample.len(), ctx.spec().degree())?;
    let h1 = ctx.h1_at(sample.values())?;
    let boot = main_term_bootstrap(&h1, plan.replicates, plan.seed)?;
    Ok(VarianceEstimate {
        value: boot.variance,
        method: *plan,
        mc_std_error: boot.mc_std_error,
    })
}

/// Moving-block estimate `(h_n (n-b+1))⁻¹ Σ_i Var*(U*_{b,i})`.
///
/// Block `i` (0-based) resamples its own `b` values with replicate `k`
/// drawn from stream `(seed, [i·B + k])`, so a single block with `b = n`
/// reproduces [`efron_variance`] draw for draw.
pub fn moving_block_variance(sample: &Sample, spec: &UStatSpec, plan: &ResamplingPlan) -> Result<VarianceEstimate> {
    if plan.method != ResampleMethod::MovingBlock {
        return Err(Error::InvalidPlan(format!("expected a moving-block plan, got {}", plan.method)));
    }
    let n = sample.len();
    plan.validate(n, spec.degree())?;
    let b = plan.block.expect("validated");
    let h = plan.scale(n);
    let reps = plan.replicates;
    let blocks = n - b + 1;
    let xs = sample.values();
    let per_block: Vec<(f64, f64)> = (0..blocks)
        .map(|i| {
            let values = replicate_values(spec, &xs[i..i + b], plan.seed, (i * reps) as u64, reps)?;
            Ok(replicate_variance(&values))
        })
        .collect::<Result<_>>()?;
    let mut total = Compensated::default();
    let mut se2 = Compensated::default();
    for &(v, se) in &per_block {
        total.add(v);
        se2.add(se * se);
    }
    let scale = h * blocks as f64;
    Ok(VarianceEstimate {
        value: total.total() / scale,
        method: *plan,
        mc_std_error: if blocks == 1 { per_block[0].1 / h } else { se2.total().sqrt() / scale },
    })
}

/// Dispatches on `plan.method`. Main-term plans need a model context.
pub fn estimate_variance(
    sample: &Sample,
    spec: &UStatSpec,
    plan: &ResamplingPlan,
    ctx: Option<&DecompContext>,
) -> Result<VarianceEstimate> {
    match plan.method {
        ResampleMethod::Efron => efron_variance(sample, spec, plan),
        ResampleMethod::MovingBlock => moving_block_variance(sample, spec, plan),
        ResampleMethod::ExactOracle => exact_bootstrap_variance(sample, spec),
        ResampleMethod::MainTerm => {
            let ctx = ctx.ok_or_else(|| Error::Unsupported("main-term bootstrap needs a known model".into()))?;
            main_term_variance_estimate(ctx, sample, plan)
        }
    }
}

/// Gaussian interval `point ± z_{(1+level)/2} √variance`.
pub fn normal_ci(point: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Range(format!("level must lie in (0, 1), got {level}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::InvalidInput(format!("variance must be non-negative, got {variance}")));
    }
    let half = normal::quantile(0.5 * (1.0 + level)) * variance.sqrt();
    Ok((point - half, point + half))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    #[test]
    fn exact_oracle_examples() {
        let v = exact_bootstrap_variance(&s(&[1.0, 2.0]), &UStatSpec::kendall()).unwrap();
        assert!((v.value - 3.0 / 64.0).abs() < 1e-16);
        assert_eq!(v.mc_std_error, 0.0);
        assert_eq!(exact_bootstrap_variance(&s(&[1.0, 4.0, 2.0]), &UStatSpec::constant(3.0, 2)).unwrap().value, 0.0);
        assert_eq!(exact_bootstrap_variance(&s(&[2.0; 5]), &UStatSpec::kendall()).unwrap().value, 0.0);
        assert!(matches!(
            exact_bootstrap_variance(&s(&[1.0; 7]), &UStatSpec::kendall()),
            Err(Error::Size { .. })
        ));
    }

    #[test]
    fn efron_trivial_cases() {
        let plan = ResamplingPlan::efron(500, 3);
        assert_eq!(efron_variance(&s(&[1.0, 3.0, 2.0, 5.0]), &UStatSpec::constant(2.0, 2), &plan).unwrap().value, 0.0);
        assert_eq!(efron_variance(&s(&[1.5; 6]), &UStatSpec::kendall(), &plan).unwrap().value, 0.0);
        assert!(matches!(
            efron_variance(&s(&[1.0, 2.0]), &UStatSpec::kendall(), &ResamplingPlan::efron(1, 0)),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn efron_matches_exact_oracle() {
        let sample = s(&[0.3, -1.2, 2.5, 0.9]);
        let exact = exact_bootstrap_variance(&sample, &UStatSpec::kendall()).unwrap().value;
        let mc = efron_variance(&sample, &UStatSpec::kendall(), &ResamplingPlan::efron(200_000, 11)).unwrap();
        assert!((mc.value - exact).abs() < 3.0 * mc.mc_std_error, "{} vs {exact} ± {}", mc.value, mc.mc_std_error);
    }

    #[test]
    fn rank_path_matches_generic_path() {
        let sample = s(&[0.3, -1.2, 2.5, 0.9, 0.9, 4.0, -3.0]);
        let plan = ResamplingPlan::efron(300, 5);
        for kind in [crate::RankStatKind::Kendall, crate::RankStatKind::Ap] {
            let fast = UStatSpec::rank(kind);
            let slow = UStatSpec::new(
                "slow",
                2,
                move |t: &[usize], n| kind.weight(t[0], t[1], n),
                |x: &[f64]| f64::from(u8::from(x[1] > x[0])),
            )
            .unwrap();
            let a = efron_variance(&sample, &fast, &plan).unwrap().value;
            let b = efron_variance(&sample, &slow, &plan).unwrap().value;
            assert!((a - b).abs() < 1e-13 * a.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn main_term_examples() {
        let flat = main_term_bootstrap(&[0.7; 5], 100, 1).unwrap();
        assert!(flat.centered_means.iter().all(|&v| v == 0.0));
        let two = main_term_bootstrap(&[-1.0, 1.0], 100_000, 2).unwrap();
        assert!((two.variance - 0.5).abs() < 4.0 * two.mc_std_error);
    }

    #[test]
    fn moving_block_collapses_to_efron() {
        let sample = s(&[0.3, -1.2, 2.5, 0.9, 1.7, -0.4]);
        let e = efron_variance(&sample, &UStatSpec::ap(), &ResamplingPlan::efron(400, 9)).unwrap();
        let m = moving_block_variance(&sample, &UStatSpec::ap(), &ResamplingPlan::moving_block(400, 6, Some(1.0), 9)).unwrap();
        assert_eq!(e.value, m.value);
        assert!(matches!(
            moving_block_variance(&sample, &UStatSpec::ap(), &ResamplingPlan::moving_block(400, 2, None, 9)),
            Err(Error::InvalidPlan(_))
        ));
        assert!(matches!(
            moving_block_variance(&sample, &UStatSpec::ap(), &ResamplingPlan::moving_block(400, 7, None, 9)),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn ci_examples() {
        assert_eq!(normal_ci(1.5, 0.0, 0.9).unwrap(), (1.5, 1.5));
        let (lo, hi) = normal_ci(0.0, 1.0, 0.95).unwrap();
        assert!((hi - 1.959_963_984_540_054).abs() < 1e-10 && (lo + hi).abs() < 1e-15);
        let (lo, hi) = normal_ci(0.5, 0.25, 0.80).unwrap();
        assert!((hi - (0.5 + 1.281_551_565_544_600_5 * 0.5)).abs() < 1e-10);
        assert!((lo - (0.5 - 1.281_551_565_544_600_5 * 0.5)).abs() < 1e-10);
        assert!(matches!(normal_ci(0.0, 1.0, 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn method_names_parse() {
        for m in [ResampleMethod::Efron, ResampleMethod::MainTerm, ResampleMethod::MovingBlock, ResampleMethod::ExactOracle] {
            assert_eq!(m.name().parse::<ResampleMethod>().unwrap(), m);
        }
        assert_eq!("moving-block".parse::<ResampleMethod>().unwrap(), ResampleMethod::MovingBlock);
    }
}
