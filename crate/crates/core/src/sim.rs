//! Monte Carlo studies: CLT normality and coverage of `U_n`, and bias and
//! coverage of resampling variance estimators, with CSV output.
//!
//! Row `r` of a study is drawn from stream `(seed, [r])`, so a CLT study and
//! a bootstrap study with the same seed see the same rows. The bootstrap
//! plan for row `r` is seeded with `derive(seed, [r])`. The independent
//! batch used for the Monte Carlo truth in bootstrap studies occupies rows
//! `reps, reps + 1, …`.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomp::DecompContext;
use crate::distributions::{make_scenario, DistributionModel, Family};
use crate::error::{Error, Result};
use crate::fenwick::Fenwick;
use crate::gof;
use crate::normal;
use crate::resample::{estimate_variance, replicate_variance, ResampleMethod, ResamplingPlan};
use crate::rng;
use crate::ustat::{dense_ranks, rank_stat_from_ranks, RankStatKind, Sample, UStatSpec};

pub const MIN_REPS: usize = 100;
pub const DESK_REPS: usize = 5_000;
pub const FULL_SCALE_REPS: usize = 50_000;
pub const DEFAULT_BOOT: usize = 2_000;
pub const DEFAULT_BLOCK_BOOT: usize = 200;
pub const DEFAULT_TRUTH_REPS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    Clt,
    Boot,
}

/// Scenario JSON / CLI configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub statistic: RankStatKind,
    pub family: Family,
    pub n: usize,
    #[serde(alias = "Rn")]
    pub rn: f64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Bootstrap replicates; per block for moving-block resampling.
    #[serde(default, alias = "boot_B")]
    pub boot: Option<usize>,
    #[serde(default)]
    pub method: Option<ResampleMethod>,
    #[serde(default, alias = "block_b")]
    pub block: Option<usize>,
    #[serde(default, alias = "h_n")]
    pub hn: Option<f64>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_path: Option<String>,
    /// Rows in the independent truth batch of a bootstrap study.
    #[serde(default)]
    pub truth_reps: Option<usize>,
    /// Records wall-clock time; off gives byte-identical CSV across runs.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
}

fn default_reps() -> usize {
    DESK_REPS
}

fn default_levels() -> Vec<f64> {
    vec![0.8, 0.95]
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn new(statistic: RankStatKind, family: Family, n: usize, rn: f64) -> Self {
        Self {
            statistic,
            family,
            n,
            rn,
            reps: DESK_REPS,
            boot: None,
            method: None,
            block: None,
            hn: None,
            levels: default_levels(),
            seed: 0,
            out_path: None,
            truth_reps: None,
            record_runtime: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn validate_common(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.rn >= 0.0) || !self.rn.is_finite() {
            return Err(Error::Config(format!("rn must be finite and non-negative, got {}", self.rn)));
        }
        if self.reps < MIN_REPS {
            return Err(Error::Config(format!("reps must be at least {MIN_REPS}, got {}", self.reps)));
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::Config(format!("levels must lie in (0, 1), got {:?}", self.levels)));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<DistributionModel> {
        make_scenario(self.family, self.n, self.rn, self.seed)
    }

    /// Resolved resampling plan for bootstrap row `row`, and whether `h_n`
    /// fell back to `n / b`.
    pub fn plan(&self, row: u64) -> Result<(ResamplingPlan, bool)> {
        let method = self
            .method
            .ok_or_else(|| Error::Config("bootstrap study needs a method".into()))?;
        let seed = rng::derive(self.seed, &[row]);
        let plan = match method {
            ResampleMethod::Efron => ResamplingPlan::efron(self.boot.unwrap_or(DEFAULT_BOOT), seed),
            ResampleMethod::MainTerm => ResamplingPlan::main_term(self.boot.unwrap_or(DEFAULT_BOOT), seed),
            ResampleMethod::MovingBlock => {
                let b = self.block.unwrap_or((self.n / 5).max(3));
                ResamplingPlan::moving_block(self.boot.unwrap_or(DEFAULT_BLOCK_BOOT), b, self.hn, seed)
            }
            ResampleMethod::ExactOracle => {
                return Err(Error::Config("the exact oracle is not a study method".into()));
            }
        };
        plan.validate(self.n, 2).map_err(|e| Error::Config(e.to_string()))?;
        Ok((plan, method == ResampleMethod::MovingBlock && self.hn.is_none()))
    }
}

/// One CSV row. Fields that do not apply to a mode are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub mode: StudyMode,
    pub statistic: RankStatKind,
    pub family: Family,
    pub n: usize,
    pub rn: f64,
    pub method: Option<ResampleMethod>,
    pub reps: usize,
    pub boot: Option<usize>,
    pub block: Option<usize>,
    pub hn: Option<f64>,
    pub p_cvm: Option<f64>,
    pub p_lilliefors: Option<f64>,
    pub rel_bias: Option<f64>,
    pub cov80: Option<f64>,
    pub cov95: Option<f64>,
    pub var_truth: f64,
    pub e_un: f64,
    pub seed: u64,
    pub runtime_ms: u64,
}

/// Quantities reported alongside a result but not written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDiagnostics {
    /// Monte Carlo standard error of `var_truth`.
    pub var_truth_se: f64,
    pub truth_reps: usize,
    /// Coverage in percent at each configured level.
    pub coverage: Vec<(f64, f64)>,
    pub mean_estimate: Option<f64>,
    pub mean_estimate_se: Option<f64>,
    /// Replications whose variance estimate was zero.
    pub degenerate: usize,
    /// Moving-block `h_n` defaulted to `n / b`.
    pub hn_default: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub result: ScenarioResult,
    pub diagnostics: StudyDiagnostics,
}

fn rank_u(kind: RankStatKind, xs: &[f64], tree: &mut Fenwick) -> f64 {
    let (ranks, levels) = dense_ranks(xs);
    rank_stat_from_ranks(kind, &ranks, levels, tree)
}

/// `U_n` on rows `first .. first + count`.
fn simulate_statistics(model: &DistributionModel, kind: RankStatKind, seed: u64, first: u64, count: usize) -> Vec<f64> {
    (first..first + count as u64)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(model.n()), Fenwick::new(model.n())),
            |(row, tree), r| {
                let mut g = rng::stream(seed, &[r]);
                row.clear();
                model.sample_into(&mut g, row);
                rank_u(kind, row, tree)
            },
        )
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    // Running mean: identical inputs give their common value exactly.
    let mut m = 0.0;
    for (k, &v) in values.iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

fn coverage(us: &[f64], center: f64, variances: &dyn Fn(usize) -> f64, level: f64) -> f64 {
    let z = normal::quantile(0.5 * (1.0 + level));
    let hits = us
        .iter()
        .enumerate()
        .filter(|&(r, &u)| (u - center).abs() <= z * variances(r).sqrt())
        .count();
    100.0 * hits as f64 / us.len() as f64
}

fn level_coverage(cov: &[(f64, f64)], level: f64) -> Option<f64> {
    cov.iter().find(|(l, _)| (l - level).abs() < 1e-12).map(|&(_, c)| c)
}

fn elapsed_ms(config: &ScenarioConfig, start: Instant) -> u64 {
    if config.record_runtime {
        start.elapsed().as_millis() as u64
    } else {
        0
    }
}

/// CLT study: Monte Carlo mean and variance of `U_n`, normality tests of
/// the standardized values, and coverage of `U_n ± z √Var(U_n)` around
/// `E(U_n)`.
pub fn run_clt_study(config: &ScenarioConfig) -> Result<StudyOutput> {
    let start = Instant::now();
    config.validate_common()?;
    let model = config.model()?;
    let us = simulate_statistics(&model, config.statistic, config.seed, 0, config.reps);
    let e_un = mean(&us);
    let (var_truth, var_truth_se) = replicate_variance(&us);
    if !(var_truth > 0.0) {
        return Err(Error::Degenerate("U_n has zero Monte Carlo variance".into()));
    }
    let p_cvm = gof::cvm_normality(&us)?.p_value;
    let p_lilliefors = gof::lilliefors(&us)?.p_value;
    let cov: Vec<(f64, f64)> = config
        .levels
        .iter()
        .map(|&l| (l, coverage(&us, e_un, &|_| var_truth, l)))
        .collect();
    let result = ScenarioResult {
        mode: StudyMode::Clt,
        statistic: config.statistic,
        family: config.family,
        n: config.n,
        rn: config.rn,
        method: None,
        reps: config.reps,
        boot: None,
        block: None,
        hn: None,
        p_cvm: Some(p_cvm),
        p_lilliefors: Some(p_lilliefors),
        rel_bias: None,
        cov80: level_coverage(&cov, 0.8),
        cov95: level_coverage(&cov, 0.95),
        var_truth,
        e_un,
        seed: config.seed,
        runtime_ms: elapsed_ms(config, start),
    };
    Ok(StudyOutput {
        result,
        diagnostics: StudyDiagnostics {
            var_truth_se,
            truth_reps: config.reps,
            coverage: cov,
            mean_estimate: None,
            mean_estimate_se: None,
            degenerate: 0,
            hn_default: false,
        },
    })
}

/// Monte Carlo `(E U_n, Var U_n, se of Var U_n)` from the independent truth
/// batch of a bootstrap study, with the statistic supplied by the caller.
pub fn truth_moments(config: &ScenarioConfig, statistic: &(dyn Fn(&[f64]) -> Result<f64> + Sync)) -> Result<(f64, f64, f64)> {
    config.validate_common()?;
    let model = config.model()?;
    let count = config.truth_reps.unwrap_or(config.reps.max(DEFAULT_TRUTH_REPS));
    let first = config.reps as u64;
    let us: Vec<f64> = (first..first + count as u64)
        .into_par_iter()
        .map(|r| statistic(&model.sample_row(&mut rng::stream(config.seed, &[r]))))
        .collect::<Result<_>>()?;
    let (v, se) = replicate_variance(&us);
    Ok((mean(&us), v, se))
}

/// Variance estimator for row `r` of a bootstrap study.
pub type RowEstimator<'a> = dyn Fn(&[f64], u64) -> Result<f64> + Sync + 'a;

/// Bootstrap study with a caller-supplied statistic and variance estimator.
pub fn run_bootstrap_study_with(
    config: &ScenarioConfig,
    statistic: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    estimator: &RowEstimator<'_>,
) -> Result<StudyOutput> {
    let start = Instant::now();
    let (e_un, var_truth, var_truth_se) = truth_moments(config, statistic)?;
    if !(var_truth > 0.0) {
        return Err(Error::Degenerate(
            "Monte Carlo Var(U_n) is zero, so relative bias is undefined".into(),
        ));
    }
    let model = config.model()?;
    let rows: Vec<(f64, f64)> = (0..config.reps as u64)
        .into_par_iter()
        .map(|r| {
            let xs = model.sample_row(&mut rng::stream(config.seed, &[r]));
            Ok((statistic(&xs)?, estimator(&xs, r)?))
        })
        .collect::<Result<_>>()?;
    let us: Vec<f64> = rows.iter().map(|p| p.0).collect();
    let estimates: Vec<f64> = rows.iter().map(|p| p.1).collect();
    let degenerate = estimates.iter().filter(|&&v| v == 0.0).count();
    let mean_estimate = mean(&estimates);
    let mean_estimate_se = (replicate_variance(&estimates).0 / estimates.len() as f64).sqrt();
    let rel_bias = (var_truth - mean_estimate) / var_truth;
    let cov: Vec<(f64, f64)> = config
        .levels
        .iter()
        .map(|&l| (l, coverage(&us, e_un, &|r| estimates[r], l)))
        .collect();
    let (plan, hn_default) = match config.method {
        Some(_) => {
            let (p, d) = config.plan(0)?;
            (Some(p), d)
        }
        None => (None, false),
    };
    let result = ScenarioResult {
        mode: StudyMode::Boot,
        statistic: config.statistic,
        family: config.family,
        n: config.n,
        rn: config.rn,
        method: config.method,
        reps: config.reps,
        boot: plan.map(|p| p.replicates),
        block: plan.and_then(|p| p.block),
        hn: plan.filter(|p| p.method == ResampleMethod::MovingBlock).map(|p| p.scale(config.n)),
        p_cvm: None,
        p_lilliefors: None,
        rel_bias: Some(rel_bias),
        cov80: level_coverage(&cov, 0.8),
        cov95: level_coverage(&cov, 0.95),
        var_truth,
        e_un,
        seed: config.seed,
        runtime_ms: elapsed_ms(config, start),
    };
    Ok(StudyOutput {
        result,
        diagnostics: StudyDiagnostics {
            var_truth_se,
            truth_reps: config.truth_reps.unwrap_or(config.reps.max(DEFAULT_TRUTH_REPS)),
            coverage: cov,
            mean_estimate: Some(mean_estimate),
            mean_estimate_se: Some(mean_estimate_se),
            degenerate,
            hn_default,
        },
    })
}

/// Bootstrap study: relative bias `(Var(U_n) - mean Var̂) / Var(U_n)` and
/// coverage of `U_n ± z √Var̂` around `E(U_n)`.
pub fn run_bootstrap_study(config: &ScenarioConfig) -> Result<StudyOutput> {
    config.validate_common()?;
    let (_, _) = config.plan(0)?;
    let spec = UStatSpec::rank(config.statistic);
    let kind = config.statistic;
    let model = config.model()?;
    let ctx = match config.method {
        Some(ResampleMethod::MainTerm) => {
            if !model.is_continuous() {
                return Err(Error::Unsupported("main-term bootstrap needs a continuous known model".into()));
            }
            Some(DecompContext::new(model, spec.clone())?)
        }
        _ => None,
    };
    let statistic = move |xs: &[f64]| -> Result<f64> { Ok(rank_u(kind, xs, &mut Fenwick::new(xs.len()))) };
    let estimator = |xs: &[f64], r: u64| -> Result<f64> {
        let (plan, _) = config.plan(r)?;
        let sample = Sample::new(xs.to_vec())?;
        Ok(estimate_variance(&sample, &spec, &plan, ctx.as_ref())?.value)
    };
    run_bootstrap_study_with(config, &statistic, &estimator)
}

/// Runs the CLT study, or the bootstrap study when a method is set.
pub fn run_study(config: &ScenarioConfig) -> Result<StudyOutput> {
    match config.method {
        None => run_clt_study(config),
        Some(_) => run_bootstrap_study(config),
    }
}

pub const CSV_HEADER: &str =
    "mode,statistic,family,n,rn,method,reps,boot,block,hn,p_cvm,p_lilliefors,rel_bias,cov80,cov95,var_truth,e_un,seed,runtime_ms";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        Error::Csv {
            path: path.to_path_buf(),
            source: e,
        }
    }
}

fn write_csv<W: std::io::Write>(results: &[ScenarioResult], w: W) -> std::result::Result<(), csv::Error> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(CSV_HEADER.split(','))?;
    for r in results {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// CSV text for `results`: header plus one row each.
pub fn to_csv_string(results: &[ScenarioResult]) -> String {
    let mut buf = Vec::new();
    write_csv(results, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Parses CSV text produced by [`to_csv_string`].
pub fn from_csv_str(text: &str) -> Result<Vec<ScenarioResult>> {
    read_csv(text.as_bytes()).map_err(|e| Error::Config(format!("malformed results CSV: {e}")))
}

fn read_csv<R: std::io::Read>(r: R) -> std::result::Result<Vec<ScenarioResult>, csv::Error> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Writes `results` to `path`.
pub fn emit_csv(results: &[ScenarioResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(results, std::io::BufWriter::new(file)).map_err(|e| csv_error(path, e))
}

/// Reads a file written by [`emit_csv`].
pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<ScenarioResult>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file).map_err(|e| csv_error(path, e))
}
