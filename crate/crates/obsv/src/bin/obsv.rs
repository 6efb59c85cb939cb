//! Thin command-line front end over the library drivers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use obsv::cli::{cmd_bench, cmd_estimate, cmd_select, RunConfig};

#[derive(Parser)]
#[command(
    name = "obsv",
    version,
    about = "Observability analysis, minimum sensor selection and EKF validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (.toml or .json).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count override (0 = runtime default).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured selection strategy and write the trace bundle.
    Select(CommonArgs),
    /// Validate sensor subsets with seeded EKF runs.
    Estimate(CommonArgs),
    /// Emit evaluation-count tables and strategy timings.
    Bench(CommonArgs),
}

fn load(common: &CommonArgs) -> obsv::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run() -> obsv::Result<()> {
    let cli = Cli::parse();
    let (stage, common) = match &cli.command {
        Command::Select(c) => ("select", c),
        Command::Estimate(c) => ("estimate", c),
        Command::Bench(c) => ("bench", c),
    };
    let cfg = load(common)?;
    let bundle = match &cli.command {
        Command::Select(_) => cmd_select(&cfg)?,
        Command::Estimate(_) => cmd_estimate(&cfg)?,
        Command::Bench(_) => cmd_bench(&cfg)?,
    };
    eprintln!(
        "{stage}: wrote {} files to {}",
        bundle.files.len(),
        bundle.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("OBSV_LOG", "warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
