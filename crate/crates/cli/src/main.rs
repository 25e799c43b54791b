//! `iclmu`: warm-up, evaluation, sweeps, threshold tuning and reports.

mod commands;
mod config;
mod run_dir;
mod toy;

use std::fs::OpenOptions;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::Session;
use config::RunConfig;
use run_dir::{RunDir, Tee};

/// Settings shared by every command. Each one can also come from an
/// `ICLMU_*` environment variable; flags win over the environment, which
/// wins over the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true, env = "ICLMU_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "ICLMU_SEED")]
    pub seed: Option<u64>,
    /// Model backend; only `toy` ships.
    #[arg(long, global = true, env = "ICLMU_BACKEND")]
    pub backend: Option<String>,
    /// Soft-token checkpoint to evaluate or to continue warming up.
    #[arg(long, global = true, env = "ICLMU_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, env = "ICLMU_DATASET_MANIFEST")]
    pub dataset_manifest: Option<PathBuf>,
    /// Demonstrations retrieved per query.
    #[arg(long, global = true, env = "ICLMU_K")]
    pub k: Option<usize>,
    /// MMR trade-off between relevance and diversity.
    #[arg(long, global = true, env = "ICLMU_LAMBDA")]
    pub lambda: Option<f64>,
    /// Demonstrations kept per class in each draw or episode.
    #[arg(long, global = true, env = "ICLMU_SHOTS")]
    pub shots: Option<usize>,
    /// Classes per episode; enables episodic evaluation.
    #[arg(long, global = true, env = "ICLMU_WAYS")]
    pub ways: Option<usize>,
    #[arg(long, global = true, env = "ICLMU_INCLUDE_NOTA")]
    pub include_nota: Option<bool>,
    #[arg(long, global = true, env = "ICLMU_INIT", value_parser = ["random", "anneal"])]
    pub init: Option<String>,
    /// Root directory for run artifacts.
    #[arg(long, global = true, env = "ICLMU_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the soft tags on the warm-up task pool.
    Warmup,
    /// Closed- or open-world evaluation over seeded demonstration draws.
    Eval,
    /// Evaluate every handwritten template of the sweep grid.
    Sweep,
    /// Tune the in-domain OOS threshold on the validation split.
    Threshold,
    /// Summarize the reports of an earlier run.
    Report {
        /// Run directory to summarize.
        #[arg(long, env = "ICLMU_INPUT")]
        input: PathBuf,
    },
    /// Write a small synthetic dataset and matching config.
    GenerateToy {
        #[arg(default_value = "toy")]
        dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Warmup => "warmup",
            Self::Eval => "eval",
            Self::Sweep => "sweep",
            Self::Threshold => "threshold",
            Self::Report { .. } => "report",
            Self::GenerateToy { .. } => "generate-toy",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "iclmu", version, about = "Soft-token markup tags for in-context classification")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::GenerateToy { dir } = &cli.command {
        env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
        toy::generate(dir, cli.flags.seed.unwrap_or(0))?;
        println!("wrote {}", dir.join("iclmu.toml").display());
        return Ok(());
    }
    let cfg = RunConfig::resolve(&cli.flags)?;
    let run = RunDir::create(&cfg.out, cli.command.name())?;
    let log = run.file("log.txt");
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log)
        .with_context(|| format!("opening {}", log.display()))?;
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Pipe(Box::new(Tee(Arc::new(Mutex::new(file))))))
        .init();
    run.write_text("config.toml", &toml::to_string(&cfg).context("serializing the resolved config")?)?;
    log::info!("run directory {}", run.path().display());
    let started = chrono::Utc::now().to_rfc3339();
    let mut session = Session::new(cfg, run);
    let result = match &cli.command {
        Command::Warmup => commands::warmup(&mut session),
        Command::Eval => commands::eval(&mut session),
        Command::Sweep => commands::sweep(&mut session),
        Command::Threshold => commands::threshold(&mut session),
        Command::Report { input } => commands::report(&mut session, input),
        Command::GenerateToy { .. } => unreachable!(),
    };
    session.write_manifest(cli.command.name(), started, &result)?;
    result
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
