use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rtk_cli::{config, CliError, Experiment};

#[derive(Parser)]
#[command(name = "rtk", version, about = "Run-and-tumble simulator and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble; optionally compare with the grid oracle.
    Simulate(Args),
    /// Select Lyapunov constants and probe the drift inequality.
    DriftCheck(Args),
    /// Monte Carlo check of a minorisation lower bound.
    MinoriseCheck(Args),
    /// Decay curve to the steady state and its rate fit.
    RateFit(Args),
    /// Closed-form crescent and enclosing-circle geometry.
    Geometry(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set rate.chi=0.25`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(exp: Experiment, args: &Args) -> Result<rtk_cli::Status, CliError> {
    let loaded = config::load(args.config.as_deref(), &args.set)?;
    let out = args
        .out
        .clone()
        .or_else(|| loaded.config.out.clone())
        .unwrap_or_else(|| PathBuf::from("rtk-out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| rtk_cli::run(exp, &loaded, &out))
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; 2 is reserved for failed verifications here
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let (exp, args) = match &cli.command {
        Command::Simulate(a) => (Experiment::Simulate, a),
        Command::DriftCheck(a) => (Experiment::DriftCheck, a),
        Command::MinoriseCheck(a) => (Experiment::MinoriseCheck, a),
        Command::RateFit(a) => (Experiment::RateFit, a),
        Command::Geometry(a) => (Experiment::Geometry, a),
    };
    match run(exp, args) {
        Ok(status) => {
            if status == rtk_cli::Status::VerificationFailure {
                eprintln!("rtk {exp}: verification failed");
            }
            ExitCode::from(status.code())
        }
        Err(e) => {
            eprintln!("rtk {exp}: {e}");
            ExitCode::from(1)
        }
    }
}
