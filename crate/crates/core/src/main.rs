use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use ergoqueue::config::parse_config;
use ergoqueue::experiment::{run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Subcommand {
    Simulate,
    MeanMeasure,
    Sweep,
    Verify,
    ValidateService,
}

impl From<Subcommand> for Command {
    fn from(s: Subcommand) -> Self {
        match s {
            Subcommand::Simulate => Command::Simulate,
            Subcommand::MeanMeasure => Command::MeanMeasure,
            Subcommand::Sweep => Command::Sweep,
            Subcommand::Verify => Command::Verify,
            Subcommand::ValidateService => Command::ValidateService,
        }
    }
}

/// Simulate and verify infinite-server queues in a fast-oscillating
/// random environment.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `experiment.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Affects speed only, never results.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match run(cli.command.into(), &cfg, &out) {
        Ok(outcome) => {
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!("one or more checks failed");
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
