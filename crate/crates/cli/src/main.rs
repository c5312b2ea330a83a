use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tic_cli::commands::{self, PdeMode, Strategy};
use tic_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "tic", version, about = "Equilibrium, naive and precommitted control of the time-inconsistent regulator")]
struct Cli {
    /// Configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `[output] directory`).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Noise seed (overrides `[numerics] seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gain schedules of the three feedback laws.
    Gains,
    /// Exact expected cost of one law.
    Cost {
        #[arg(long, value_enum)]
        strategy: Strategy,
    },
    /// Exact costs over a range of terminal weights.
    Sweep,
    /// Monte Carlo simulation of one law.
    Simulate {
        #[arg(long, value_enum)]
        strategy: Strategy,
    },
    /// Mean paths of all three laws under shared noise.
    Compare,
    /// Finite-difference solution of the extended HJB system.
    Pde {
        #[arg(long, value_enum, default_value = "sweep")]
        mode: PdeMode,
    },
    /// Run the acceptance suite.
    Validate,
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output.directory = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.numerics.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    let (lines, verdict) = match &cli.command {
        Command::Gains => (commands::gains(&cfg)?, None),
        Command::Cost { strategy } => (commands::cost(&cfg, *strategy)?, None),
        Command::Sweep => (commands::sweep(&cfg)?, None),
        Command::Simulate { strategy } => (commands::simulate(&cfg, *strategy)?, None),
        Command::Compare => (commands::compare(&cfg)?, None),
        Command::Pde { mode } => (commands::pde(&cfg, *mode)?, None),
        Command::Validate => commands::validate(&cfg)?,
    };
    for line in lines {
        println!("{line}");
    }
    verdict.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = err.record();
            eprintln!("{}", serde_json::to_string(&record).expect("error records serialize"));
            ExitCode::from(record.exit_code as u8)
        }
    }
}
