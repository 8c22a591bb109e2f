//! `szn`: train the set-prediction network, run predictions, simulate and
//! benchmark the planners, and run the oracle self test.
//!
//! Exit codes: 0 ok, 1 test or benchmark failure, 2 usage error,
//! 3 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use szn_core::planner::PlannerMode;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<szn_core::Error> for CliError {
    fn from(e: szn_core::Error) -> Self {
        match e {
            szn_core::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Parser)]
#[command(name = "szn", version, about = "Zonotope social navigation: training, planning and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; every field is optional.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set planner.w1=2.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    gp_data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train on all scenes but the held-out one; writes a checkpoint and loss.csv.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict reachable sets for held-out windows; writes predictions.jsonl.
    Predict {
        #[command(flatten)]
        common: Common,
    },
    /// Run one closed-loop episode; writes trajectory.jsonl.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<PlannerMode>,
    },
    /// Compare planners over seeded episodes; writes benchmark.csv and episodes.csv.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Episodes per mode.
        #[arg(long)]
        episodes: Option<usize>,
        /// Comma-separated subset of coupled,decoupled,dcbf.
        #[arg(long)]
        modes: Option<String>,
    },
    /// Run the oracle suites; with --checkpoint, also verify its integrity.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic trajectory corpus and model-error samples.
    SynthCorpus {
        #[command(flatten)]
        common: Common,
    },
}

fn configure(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if common.dataset.is_some() {
        cfg.paths.dataset = common.dataset.clone();
    }
    if common.checkpoint.is_some() {
        cfg.paths.checkpoint = common.checkpoint.clone();
    }
    if common.gp_data.is_some() {
        cfg.paths.gp_data = common.gp_data.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let (name, common) = match &cli.command {
        Command::Train { common, .. } => ("train", common),
        Command::Predict { common } => ("predict", common),
        Command::Simulate { common, .. } => ("simulate", common),
        Command::Benchmark { common, .. } => ("benchmark", common),
        Command::Selftest { common } => ("selftest", common),
        Command::SynthCorpus { common } => ("synth-corpus", common),
    };
    let mut cfg = configure(common)?;
    match &cli.command {
        Command::Train { epochs: Some(e), .. } => cfg.train.epochs = *e,
        Command::Simulate { mode: Some(m), .. } => cfg.planner.mode = *m,
        Command::Benchmark { episodes, modes, .. } => {
            if let Some(e) = episodes {
                cfg.benchmark.episodes = *e;
            }
            if let Some(m) = modes {
                cfg.benchmark.modes = commands::parse_modes(m)?;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out_dir.display())))?;
    cfg.echo(name)?;
    match cli.command {
        Command::Train { .. } => commands::train_cmd(&cfg),
        Command::Predict { .. } => commands::predict_cmd(&cfg),
        Command::Simulate { .. } => commands::simulate_cmd(&cfg),
        Command::Benchmark { .. } => commands::benchmark_cmd(&cfg),
        Command::Selftest { .. } => commands::selftest_cmd(&cfg),
        Command::SynthCorpus { .. } => commands::synth_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
