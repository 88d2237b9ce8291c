use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wal::config::{load_config, ExperimentConfig};
use wal::runner::{cmd_bound, cmd_run, cmd_sweep};
use wal::CliError;
use wal_core::baselines::Method;

#[derive(Parser)]
#[command(name = "wal", version, about = "Weak adaptation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) cell and write metrics.csv.
    Run(Common),
    /// Run the grid over the configured sweep axis.
    Sweep(Common),
    /// Evaluate the error bound for the WAL cells of a finished run.
    Bound(Common),
    /// Like `run`, restricted to the baseline methods.
    Baseline(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base preset, overriding the file's `preset` key.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads for independent cells.
    #[arg(long)]
    workers: Option<usize>,
}

fn load(c: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = load_config(&c.config, c.preset.as_deref())?;
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &c.out {
        cfg.out.clone_from(o);
    }
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(CliError::Config(wal::config::ConfigError {
                message: "--workers must be at least 1".into(),
                location: None,
                path: None,
            }));
        }
        cfg.workers = w;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => cmd_run(&load(&c)?).map(drop),
        Command::Sweep(c) => cmd_sweep(&load(&c)?).map(drop),
        Command::Bound(c) => cmd_bound(&load(&c)?).map(drop),
        Command::Baseline(c) => {
            let mut cfg = load(&c)?;
            cfg.methods.retain(|m| *m != Method::Wal);
            if cfg.methods.is_empty() {
                cfg.methods = Method::ALL[1..].to_vec();
            }
            cmd_run(&cfg).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
