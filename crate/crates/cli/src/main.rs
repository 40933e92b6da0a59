use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stationary_lab_cli::{config, exit, run, CliError, Command, Context};

/// Stationary-process laboratory.
#[derive(Debug, Parser)]
#[command(name = "stlab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (JSON, "schema": 1).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "STLAB_WORKERS")]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Exit with code 3 when an acceptance check fails.
    #[arg(long)]
    assert: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("stlab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn execute(cli: &Cli) -> Result<u8, CliError> {
    let loaded = config::load(&cli.config)?;
    if cli.workers == Some(0) {
        return Err(CliError::Config("--workers must be ≥ 1".into()));
    }
    let ctx = Context {
        seed: cli.seed.or(loaded.config.seed).unwrap_or(0),
        config: loaded,
        workers: cli.workers,
        out: cli.out.clone(),
    };
    let outcome = run(cli.command, &ctx)?;
    for l in &outcome.lines {
        println!("{l}");
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if cli.assert && !outcome.failures.is_empty() {
        return Err(CliError::Assertion(outcome.failures.join("; ")));
    }
    if let Some(u) = outcome.undecided {
        eprintln!("stlab: {u}");
        return Ok(exit::REFUSED);
    }
    Ok(exit::SUCCESS)
}
