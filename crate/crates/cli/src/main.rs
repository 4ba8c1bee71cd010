use std::path::PathBuf;
use std::process::ExitCode;

use bnnsim::memsim::PolicyName;
use bnnsim_cli::{run, Command, ExperimentConfig, Overrides, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bnnsim",
    version,
    about = "BNN accelerator and faulty-memory simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Randomized trials per point; overrides the config.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Allocation policy: sram-exec or scm-exec.
    #[arg(long, global = true)]
    policy: Option<PolicyName>,
    /// Write the memory access trace of the first inference.
    #[arg(long, global = true)]
    trace: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Classify the test set once per trial.
    Infer,
    /// Accuracy versus bit error rate.
    SweepBer,
    /// Accuracy, power and energy versus supply voltage.
    SweepVoltage,
    /// Memory BER self-test.
    Selftest,
    /// Power, frequency and energy tables.
    PowerReport,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Infer => Command::Infer,
        Cmd::SweepBer => Command::SweepBer,
        Cmd::SweepVoltage => Command::SweepVoltage,
        Cmd::Selftest => Command::Selftest,
        Cmd::PowerReport => Command::PowerReport,
    };
    let overrides = Overrides {
        seed: cli.seed,
        trials: cli.trials,
        policy: cli.policy,
        out: cli.out,
    };
    let loaded = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::default().finish(PathBuf::from("."), &overrides),
    };
    let result = loaded.and_then(|cfg| run(command, &cfg, RunOptions { trace: cli.trace }));
    match result {
        Ok(meta) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&meta["summary"]).unwrap_or_default()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("bnnsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
