use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heapcount::commands::{self, Command};
use heapcount::config::RunConfig;
use heapcount::par;

/// Latent recall and heaping models for retrospectively reported counts.
#[derive(Parser)]
#[command(name = "heapcount", version)]
struct Cli {
    /// Cap on worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset (and its latent truth) from a scenario.
    Simulate { config: PathBuf },
    /// Posterior mode, information, importance-sampled posterior summaries.
    Fit { config: PathBuf },
    /// Impute latent remembered counts and rounding classes.
    Impute { config: PathBuf },
    /// Heap fractions of reported counts against imputed remembered counts.
    Check { config: PathBuf },
    /// Predict true counts for subjects with reported counts only.
    Predict { config: PathBuf },
    /// Mean-recall and rounding-probability curves.
    Curves { config: PathBuf },
    /// Repeated simulate-and-fit study with bias, RMSE and coverage.
    Simstudy { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, path) = match cli.command {
        Cmd::Simulate { config } => (Command::Simulate, config),
        Cmd::Fit { config } => (Command::Fit, config),
        Cmd::Impute { config } => (Command::Impute, config),
        Cmd::Check { config } => (Command::Check, config),
        Cmd::Predict { config } => (Command::Predict, config),
        Cmd::Curves { config } => (Command::Curves, config),
        Cmd::Simstudy { config } => (Command::Simstudy, config),
    };
    let threads = cli.threads;
    let result = RunConfig::load(&path).and_then(|mut cfg| {
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        if let Some(o) = cli.out {
            cfg.output_dir = o;
        }
        if threads > 0 {
            cfg.threads = threads;
        }
        par::set_threads(cfg.threads);
        commands::run(command, &cfg)
    });
    match &result {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
        }
        Err(e) => log::error!("{e}"),
    }
    ExitCode::from(commands::exit_code(&result) as u8)
}
