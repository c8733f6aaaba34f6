use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stfrac::config::ExperimentConfig;
use stfrac::pipeline::{run_command, RunOptions};

#[derive(Parser)]
#[command(name = "stfrac", about = "Space-time fractional inverse problems: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; the built-in potential twin is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Noise seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Verify,
    Forward,
    Dnmap,
    #[command(name = "invert_q")]
    InvertQ,
    #[command(name = "invert_A")]
    InvertA,
    #[command(name = "invert_semilinear")]
    InvertSemilinear,
    Runge,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Forward => "forward",
            Self::Dnmap => "dnmap",
            Self::InvertQ => "invert_q",
            Self::InvertA => "invert_A",
            Self::InvertSemilinear => "invert_semilinear",
            Self::Runge => "runge",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::potential_twin_1d()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions { out: cli.out, seed: cli.seed };
    match run_command(cli.command.name(), cfg, &opts) {
        Ok(m) => {
            for c in &m.checks {
                println!("{} {} (value {:e}, threshold {:e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            for s in &m.stages {
                println!("stage {} {:.3}s", s.stage, s.seconds);
            }
            if m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
