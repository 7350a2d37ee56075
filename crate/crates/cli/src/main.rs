use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use wustat::decomp::DecompContext;
use wustat::distributions::{spread_and_scale_ratio, tail_diagnostics, Family, TailParams};
use wustat::resample::ResampleMethod;
use wustat::sim::{self, ScenarioConfig, StudyOutput, FULL_SCALE_REPS};
use wustat::weights::{self, Normalization};
use wustat::{RankStatKind, UStatSpec};

/// Monte Carlo studies and diagnostics for weighted U-statistics.
#[derive(Parser)]
#[command(name = "wustat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normality and coverage of the standardized statistic.
    Clt(StudyArgs),
    /// Bias and coverage of a resampling variance estimator.
    Boot(BootArgs),
    /// Runs the study described by a scenario JSON file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weight, tail and heterogeneity report for a scenario JSON file.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long = "stat", default_value = "kendall")]
    statistic: RankStatKind,
    #[arg(long, default_value = "gaussian")]
    family: Family,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    rn: f64,
    #[arg(long, default_value_t = sim::DESK_REPS)]
    reps: usize,
    /// Uses the full 50,000 replications.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Confidence levels for coverage.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.95])]
    levels: Vec<f64>,
    /// Writes 0 in the runtime column so output is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[arg(long)]
    method: ResampleMethod,
    /// Bootstrap replicates (per block for moving-block).
    #[arg(long)]
    boot: Option<usize>,
    #[arg(long)]
    block: Option<usize>,
    #[arg(long)]
    hn: Option<f64>,
    /// Rows in the independent batch used for the Monte Carlo truth.
    #[arg(long)]
    truth_reps: Option<usize>,
}

impl StudyArgs {
    fn config(&self) -> ScenarioConfig {
        ScenarioConfig {
            reps: if self.full_scale { FULL_SCALE_REPS } else { self.reps },
            seed: self.seed,
            levels: self.levels.clone(),
            record_runtime: !self.no_timing,
            out_path: self.out.as_ref().map(|p| p.display().to_string()),
            ..ScenarioConfig::new(self.statistic, self.family, self.n, self.rn)
        }
    }
}

/// Scenario JSON accepted by `diagnose`.
#[derive(Deserialize)]
struct DiagnoseConfig {
    #[serde(flatten)]
    scenario: ScenarioConfig,
    #[serde(default)]
    tail: Option<TailParams>,
    /// Variance used to standardize `U_n`; defaults to `V(n)`.
    #[serde(default)]
    sigma2: Option<f64>,
}

#[derive(Serialize)]
struct WeightRow {
    k: usize,
    q: usize,
    power_of_n: f64,
    exact_cardinality: f64,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn finish(output: StudyOutput, out: Option<&Path>) -> Result<()> {
    if let Some(p) = out {
        sim::emit_csv(std::slice::from_ref(&output.result), p)?;
    }
    println!("{}", serde_json::to_string_pretty(&output)?);
    if output.diagnostics.hn_default {
        eprintln!("note: h_n defaulted to n/b = {}", output.result.hn.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn section<T: Serialize>(r: wustat::Result<T>) -> Value {
    match r {
        Ok(v) => serde_json::to_value(v).expect("serializable"),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn diagnose(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: DiagnoseConfig = serde_json::from_str(&read(config)?).context("parsing scenario JSON")?;
    let sc = &cfg.scenario;
    let model = sc.model()?;
    let spec = UStatSpec::rank(sc.statistic);
    let mut rows = Vec::new();
    for (k, q) in [(2, 0), (2, 1), (2, 2), (3, 1), (4, 1)] {
        let p = weights::average_weight(&spec, sc.n, k, q, Normalization::PowerOfN)?;
        let e = weights::average_weight(&spec, sc.n, k, q, Normalization::ExactCardinality)?;
        rows.push(WeightRow {
            k,
            q,
            power_of_n: p.value,
            exact_cardinality: e.value,
        });
    }
    let mut weight_report = json!({ "average_weights": rows });
    if sc.statistic == RankStatKind::Ap {
        weight_report["ap_a22_closed_form"] = json!(weights::ap_a22_closed_form(sc.n));
        weight_report["sum_weight_identity"] = json!(weights::sum_weight_identity(sc.n));
    }
    let (r_n, rho_n) = spread_and_scale_ratio(&model);
    let tail = match cfg.tail {
        Some(p) => section(tail_diagnostics(&model, p)),
        None => json!({ "r_n": r_n, "rho_n": rho_n, "note": "no tail constants supplied" }),
    };
    let ctx = DecompContext::new(model, spec)?;
    let heterogeneity = match cfg.sigma2 {
        Some(s) => section(weights::condition_report(&ctx, s)),
        None => section(ctx.main_term_variance().and_then(|v| weights::condition_report(&ctx, v))),
    };
    let report = json!({
        "scenario": sc,
        "weights": weight_report,
        "tail": tail,
        "heterogeneity": heterogeneity,
    });
    write_json(&report, out)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Clt(a) => {
            let out = sim::run_clt_study(&a.config())?;
            finish(out, a.out.as_deref())
        }
        Command::Boot(b) => {
            if b.method == ResampleMethod::ExactOracle {
                bail!("the exact oracle is not a study method");
            }
            let cfg = ScenarioConfig {
                method: Some(b.method),
                boot: b.boot,
                block: b.block,
                hn: b.hn,
                truth_reps: b.truth_reps,
                ..b.study.config()
            };
            let out = sim::run_bootstrap_study(&cfg)?;
            finish(out, b.study.out.as_deref())
        }
        Command::Run { config, out } => {
            let cfg = ScenarioConfig::from_json(&read(&config)?)?;
            let out = out.or_else(|| cfg.out_path.clone().map(PathBuf::from));
            finish(sim::run_study(&cfg)?, out.as_deref())
        }
        Command::Diagnose { config, out } => diagnose(&config, out.as_deref()),
    }
}
