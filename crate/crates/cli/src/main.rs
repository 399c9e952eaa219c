use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use weakcolour::experiment::{
    preset, run_experiment_to_dir, simulate_truth, write_json, ExperimentConfig, FilterKind,
};
use weakcolour::fpe::{cubic_test_model, EquivalenceCheck};
use weakcolour::noise::{default_tail_cutoff, ou_stats, stats_from_autocorrelation, OuParams};
use weakcolour::{export_csv, simulate_observations, Polynomial};

#[derive(Parser)]
#[command(name = "weakcolour", version, about = "Filtering and simulation for systems driven by weakly coloured noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the correlation moments of an Ornstein-Uhlenbeck input
    Stats(StatsArgs),
    /// Simulate truth paths and their observations
    Simulate(RunArgs),
    /// Run the filter and the open-loop predictor and write metrics
    Filter(RunArgs),
    /// Compare coloured, white-noise and Fokker-Planck densities
    FpeCheck(FpeArgs),
    /// Run one of the four Duffing parameter sets
    Duffing(DuffingArgs),
}

#[derive(Args)]
struct StatsArgs {
    /// Noise intensity D
    #[arg(long)]
    d: Option<f64>,
    /// Correlation time
    #[arg(long)]
    tau_cor: Option<f64>,
    /// Read D and tau_cor from an experiment config
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Coloured,
    Classical,
    ClosedForm,
}

impl From<Mode> for FilterKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Coloured => FilterKind::Coloured,
            Mode::Classical => FilterKind::Classical,
            Mode::ClosedForm => FilterKind::ClosedForm,
        }
    }
}

#[derive(Args)]
struct Common {
    /// JSON experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of runs (paths)
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    dt: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    t_end: Option<f64>,
    /// Filter equations
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Start from a preset instead of a config file
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4), conflicts_with = "config")]
    set: Option<u8>,
}

#[derive(Args)]
struct DuffingArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter set
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    set: u8,
}

#[derive(Args)]
struct FpeArgs {
    #[command(flatten)]
    common: Common,
    /// Cubic coefficient of f = gamma x³ - x
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    gamma: f64,
    /// Noise intensity D
    #[arg(long, default_value_t = 0.01)]
    d: f64,
    /// Correlation time
    #[arg(long, default_value_t = 0.005)]
    tau_cor: f64,
    /// Histogram cells
    #[arg(long, default_value_t = 400)]
    cells: usize,
}

fn experiment_config(common: &Common, set: Option<u8>) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, set) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(id)) => preset(id)?,
        (None, None) => preset(1)?,
    };
    cfg.set_horizon(common.t_end, common.dt);
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(runs) = common.runs {
        cfg.n_runs = runs;
    }
    if let Some(mode) = common.mode {
        cfg.filter = mode.into();
    }
    cfg.validate()?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn stats(args: &StatsArgs) -> Result<()> {
    let (d, tau) = match (&args.config, args.d, args.tau_cor) {
        (_, Some(d), Some(tau)) => (d, tau),
        (Some(path), None, None) => {
            let cfg = ExperimentConfig::from_file(path)?;
            (cfg.d, cfg.tau_cor)
        }
        _ => bail!("give both --d and --tau-cor, or --config"),
    };
    let ou = OuParams::new(d, tau)?;
    let exact = ou_stats(&ou);
    let cutoff = default_tail_cutoff(&ou, tau);
    let quad = stats_from_autocorrelation(&ou, cutoff, tau / 2000.0)?;
    print_json(&json!({
        "D": d,
        "tau_cor": tau,
        "mu1": exact.mu1,
        "mu2": exact.mu2,
        "quadrature": { "mu1": quad.mu1, "mu2": quad.mu2 },
    }))
}

fn simulate(args: &RunArgs) -> Result<()> {
    let cfg = experiment_config(&args.common, args.set)?;
    let out = &args.common.out;
    create_dir(out)?;
    let h = Polynomial::linear(1.0, 0.0);
    for run in 0..cfg.n_runs {
        let path = simulate_truth(&cfg, run).with_context(|| format!("run {run}"))?;
        let obs = simulate_observations(&path, &h, cfg.phi_eta, cfg.seed, run as u64)?;
        export_csv(&path, out.join(format!("path_{run:03}.csv")))?;
        export_csv(&obs, out.join(format!("obs_{run:03}.csv")))?;
    }
    write_json(&cfg, out.join("config.json"))?;
    eprintln!("wrote {} paths to {}", cfg.n_runs, out.display());
    Ok(())
}

fn filter(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let report = run_experiment_to_dir(cfg, out)?;
    write_json(cfg, out.join("config.json"))?;
    print_json(&json!({
        "rmse_filter": report.rmse_filter,
        "rmse_open_loop": report.rmse_open_loop,
        "mean_nees": report.mean_nees,
        "clamp_events": report.clamp_events,
        "filter_wins": report.filter_wins,
        "n_runs": report.n_runs,
    }))
}

fn fpe_check(args: &FpeArgs) -> Result<()> {
    let c = &args.common;
    if c.config.is_some() || c.mode.is_some() {
        bail!("fpe-check does not take --config or --mode");
    }
    let ou = OuParams::new(args.d, args.tau_cor)?;
    let mut check = EquivalenceCheck::standard(ou, c.seed.unwrap_or(1));
    check.n_cells = args.cells;
    if let Some(n) = c.runs {
        check.n_paths = n;
    }
    if let Some(dt) = c.dt {
        check.dt = dt;
    }
    if let Some(t) = c.t_end {
        check.t = t;
    }
    let report = check.run(&cubic_test_model(args.gamma))?;
    create_dir(&c.out)?;
    export_csv(&report.coloured, c.out.join("density_coloured.csv"))?;
    export_csv(&report.ito, c.out.join("density_ito.csv"))?;
    export_csv(&report.fpe, c.out.join("density_fpe.csv"))?;
    let summary = json!({
        "gamma": args.gamma,
        "check": check,
        "l1_coloured_ito": report.l1_coloured_ito,
        "l1_coloured_fpe": report.l1_coloured_fpe,
        "l1_ito_fpe": report.l1_ito_fpe,
    });
    write_json(&summary, c.out.join("equivalence.json"))?;
    print_json(&summary)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats(args) => stats(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Filter(args) => {
            let cfg = experiment_config(&args.common, args.set)?;
            filter(&cfg, &args.common.out)
        }
        Command::FpeCheck(args) => fpe_check(&args),
        Command::Duffing(args) => {
            if args.common.config.is_some() {
                bail!("duffing takes --set, not --config");
            }
            let cfg = experiment_config(&args.common, Some(args.set))?;
            filter(&cfg, &args.common.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
