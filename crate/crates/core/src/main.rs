//! `lyapflow` command-line interface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lyapflow::config::ExperimentConfig;
use lyapflow::experiment::{
    cmd_alpha_sweep, cmd_bound, cmd_compare, cmd_gradcheck, cmd_perturb_sweep, cmd_train, default_out_dir, RunSummary,
};
use lyapflow::Error;

#[derive(Parser)]
#[command(name = "lyapflow", version, about = "Finite-time neural-network training with settling-time bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (`key = value` lines); defaults apply when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts [default: runs/<command>]
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides `run.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Allow alpha = 0 (discontinuous law)
    #[arg(long, global = true)]
    unsafe_alpha: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train one loss and write its trajectory
    Train,
    /// Train Lyapunov, L1 and L2 from identical initial weights
    Compare,
    /// Settling-time bounds over the gain grid
    Bound,
    /// Robustness runs over perturbation bounds
    PerturbSweep,
    /// Lyapunov runs over exponents alpha
    AlphaSweep,
    /// Backprop gradient against central finite differences
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Compare => "compare",
            Command::Bound => "bound",
            Command::PerturbSweep => "perturb-sweep",
            Command::AlphaSweep => "alpha-sweep",
            Command::Gradcheck => "gradcheck",
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, cli.unsafe_alpha)?,
        None => ExperimentConfig::parse("", cli.unsafe_alpha)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<RunSummary, Error> {
    let cfg = load(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| default_out_dir(cli.command.name()));
    let summary = match cli.command {
        Command::Train => cmd_train(&cfg, &out)?,
        Command::Compare => cmd_compare(&cfg, &out)?,
        Command::Bound => cmd_bound(&cfg, &out)?,
        Command::PerturbSweep => cmd_perturb_sweep(&cfg, &out)?,
        Command::AlphaSweep => cmd_alpha_sweep(&cfg, &out)?,
        Command::Gradcheck => cmd_gradcheck(&cfg, &out)?.1,
    };
    eprintln!("artifacts written to {}", out.display());
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if summary.rows.is_empty() {
                print!("{}", summary.extra.render());
            } else {
                print!("{}", summary.to_table());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
