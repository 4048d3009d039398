use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hsch_core::config::{Scenario, SimConfig};
use hsch_core::runner::{run, validate};

#[derive(Parser)]
#[command(name = "hsch", version, about = "Nonlocal Hele-Shaw-Cahn-Hilliard simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: out/<scenario>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Memory kernel: eigenseries against the finite-difference cell problem.
    Kernel(RunArgs),
    /// One-dimensional Cahn-Hilliard run.
    Ch1d(RunArgs),
    /// Coupled two-dimensional Hele-Shaw-Cahn-Hilliard run.
    Hsch2d(RunArgs),
    /// Thin-strip convergence study.
    ThinLayer(RunArgs),
    /// Property suite: inequalities, Cahn-Hilliard invariants, kernel structure.
    Suite(RunArgs),
    /// Checks a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        /// Scenario to check against (default: the config's own).
        #[arg(long)]
        scenario: Option<String>,
    },
}

fn load(path: &Path) -> Result<SimConfig, ExitCode> {
    SimConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn execute(scenario: Scenario, args: RunArgs) -> ExitCode {
    let mut cfg = match load(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| PathBuf::from("out").join(scenario.name()));
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    match run(scenario, &cfg, &base, &out) {
        Ok(outcome) => {
            for line in outcome.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Kernel(a) => execute(Scenario::Kernel, a),
        Command::Ch1d(a) => execute(Scenario::Ch1d, a),
        Command::Hsch2d(a) => execute(Scenario::Hsch2d, a),
        Command::ThinLayer(a) => execute(Scenario::ThinLayer, a),
        Command::Suite(a) => execute(Scenario::Suite, a),
        Command::Validate { config, scenario } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let scenario = match scenario.map(|s| s.parse::<Scenario>()).transpose() {
                Ok(s) => s.or(cfg.scenario).unwrap_or(Scenario::Suite),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match validate(&cfg, scenario) {
                Ok(()) => {
                    println!("config valid for {scenario}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
