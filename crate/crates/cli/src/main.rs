//! `mssl`: fit mixed semi-supervised estimators, run simulation presets and
//! evaluate limiting gains.
//!
//! Exit codes: 0 success, 1 I/O or parse failure, 2 usage or domain error.

mod error;
mod fit;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mssl_core::asymptotics::{finite_m_report, interp_limits, ols_limits, AsymptoticSetting, LimitReport};
use mssl_core::io::{read_labeled_csv, read_pool};
use mssl_sim::output::write_csvs;
use mssl_sim::{run_experiment, ExperimentConfig, Preset};
use serde_json::{json, Value};

use crate::error::{CliError, Result};
use crate::fit::{run_fit, AlphaPolicy, FitRequest, ModelKind};

pub const SCHEMA_VERSION: u32 = 1;
const DEFAULT_SEED: u64 = 20240101;

#[derive(Parser)]
#[command(name = "mssl", version, about = "Mixed semi-supervised regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit supervised, pool-informed and mixed estimators.
    Fit(FitArgs),
    /// Report the estimated risk terms and risk curve without coefficients.
    Diagnose(FitArgs),
    /// Run a simulation preset and write result CSVs.
    Simulate(SimulateArgs),
    /// Closed-form limits of the mixing gain.
    Limits(LimitsArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Labeled CSV, response in the last column.
    #[arg(long)]
    labeled: PathBuf,
    /// Unlabeled pool, CSV or binary.
    #[arg(long)]
    pool: PathBuf,
    /// ols, glm, glm:<link> or interp.
    #[arg(long, default_value = "ols")]
    model: ModelKind,
    /// GLM link (identity or elu); defaults to elu for glm.
    #[arg(long)]
    link: Option<String>,
    /// auto, grid or a fixed ratio in [0, 1].
    #[arg(long, default_value = "auto")]
    alpha: AlphaPolicy,
    #[arg(long, default_value_t = 51)]
    grid_size: usize,
    #[arg(long, env = "MSSL_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Print the available presets and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    preset: Option<String>,
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replications per grid cell.
    #[arg(long, short = 'K')]
    replications: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long, env = "MSSL_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Directory for `<preset>.csv` and `<preset>_pairs.csv`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LimitMode {
    Ols,
    Interp,
    #[value(name = "finite_m")]
    FiniteM,
}

impl LimitMode {
    fn name(self) -> &'static str {
        match self {
            LimitMode::Ols => "ols",
            LimitMode::Interp => "interp",
            LimitMode::FiniteM => "finite_m",
        }
    }
}

#[derive(Args)]
struct LimitsArgs {
    mode: LimitMode,
    /// lim p/n.
    #[arg(long)]
    gamma: f64,
    /// lim p̃/n (interp) or lim p/m (finite_m).
    #[arg(long, default_value_t = 0.0)]
    gamma_tilde: f64,
    #[arg(long)]
    sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    tau2: f64,
    /// lim tr(Σ).
    #[arg(long)]
    c2: f64,
}

fn envelope(command: &str, body: Value) -> Value {
    let mut out = json!({ "schema_version": SCHEMA_VERSION, "command": command });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    out
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(0) => Err(CliError::usage("--threads must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::usage(format!("cannot start {t} threads: {e}")))?
            .install(f),
        None => f(),
    }
}

fn input(path: &Path, source: mssl_core::Error) -> CliError {
    CliError::Input { path: path.to_path_buf(), source }
}

fn cmd_fit(args: &FitArgs, diagnose: bool) -> Result<Value> {
    let req = FitRequest {
        labeled: read_labeled_csv(&args.labeled).map_err(|e| input(&args.labeled, e))?,
        pool: read_pool(&args.pool).map_err(|e| input(&args.pool, e))?,
        model: args.model.clone(),
        link: args.link.clone(),
        alpha: args.alpha,
        grid_size: args.grid_size,
        seed: args.seed,
        diagnose,
    };
    let out = with_threads(args.threads, || run_fit(&req))?;
    Ok(envelope(if diagnose { "diagnose" } else { "fit" }, serde_json::to_value(out)?))
}

fn preset_list() -> Value {
    let presets: Vec<Value> = Preset::ALL
        .iter()
        .map(|p| json!({ "name": p.name(), "model": p.model().to_string(), "description": p.description() }))
        .collect();
    envelope("simulate", json!({ "presets": presets }))
}

fn load_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), preset) => {
            let cfg = ExperimentConfig::from_path(path)?;
            if let Some(name) = preset {
                let p: Preset = name.parse()?;
                if p != cfg.preset {
                    return Err(CliError::usage(format!("--preset {p} conflicts with preset {} in {}", cfg.preset, path.display())));
                }
            }
            cfg
        }
        (None, Some(name)) => ExperimentConfig::preset(name.parse()?),
        (None, None) => return Err(CliError::usage(format!("give --preset or --config (presets: {})", Preset::available()))),
    };
    if let Some(k) = args.replications {
        cfg.replications = k;
    }
    if let Some(g) = args.grid_size {
        cfg.grid_size = g;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_path(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> PathBuf {
    let file = format!("{}.csv", cfg.preset);
    match (out_dir, &cfg.output) {
        (Some(dir), _) => dir.join(file),
        (None, Some(path)) => path.clone(),
        (None, None) => PathBuf::from(file),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<Value> {
    if args.list {
        return Ok(preset_list());
    }
    let cfg = load_config(args)?;
    let result = run_experiment(&cfg)?;
    let (results, pairs) = write_csvs(&output_path(&cfg, args.out_dir.as_deref()), &result)?;
    Ok(envelope(
        "simulate",
        json!({
            "preset": cfg.preset.name(),
            "grid_name": result.grid_name,
            "replications": cfg.replications,
            "seed": cfg.seed,
            "failed_replications": result.failed(),
            "results_csv": results.display().to_string(),
            "pairs_csv": pairs.display().to_string(),
            "rows": serde_json::to_value(&result.rows)?,
        }),
    ))
}

fn cmd_limits(args: &LimitsArgs) -> Result<Value> {
    let s = AsymptoticSetting { gamma: args.gamma, gamma_tilde: args.gamma_tilde, sigma2: args.sigma2, tau2: args.tau2, c2: args.c2 };
    let report: LimitReport = match args.mode {
        LimitMode::Ols => ols_limits(&s)?,
        LimitMode::Interp => interp_limits(&s)?,
        LimitMode::FiniteM => finite_m_report(&s)?,
    };
    let mut body = serde_json::to_value(report)?;
    if let Value::Object(o) = &mut body {
        o.insert("mode".into(), json!(args.mode.name()));
        o.insert("setting".into(), serde_json::to_value(s)?);
    }
    Ok(envelope("limits", body))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, false),
        Command::Diagnose(a) => cmd_fit(a, true),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Limits(a) => cmd_limits(a),
    };
    match result.and_then(|v| Ok(serde_json::to_string_pretty(&v)?)) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
