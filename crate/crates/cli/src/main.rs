//! `drift <task> --config <path> --seed <u64> --out <dir>`
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 property-suite failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use drifting::experiments::{self, ExperimentConfig, Task};
use drifting::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Toy2d,
    Denoise,
    Unpaired,
    DriftEval,
    StftCheck,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Toy2d => Task::Toy2d,
            TaskArg::Denoise => Task::Denoise,
            TaskArg::Unpaired => Task::Unpaired,
            TaskArg::DriftEval => Task::DriftEval,
            TaskArg::StftCheck => Task::StftCheck,
        }
    }
}

/// Drift-field training experiments.
#[derive(Debug, Parser)]
#[command(name = "drift", version)]
struct Args {
    task: TaskArg,
    /// Plain-text `key = value` config with `[section]` headers. Task
    /// defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides any seed in the config.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// drift-eval only: corrupt the reference computation (negative control).
    #[arg(long)]
    perturb: bool,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_SUITE: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERICAL,
    }
}

fn main() -> ExitCode {
    // Usage errors count as configuration errors; clap would exit with 2.
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let task = Task::from(args.task);
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path, Some(task)),
        None => Ok(ExperimentConfig::new(task)),
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    cfg.seed = Some(args.seed);
    cfg.suite.perturb |= args.perturb;

    match experiments::run(&cfg, &args.out) {
        Ok(outcome) => {
            outcome.lines.iter().for_each(|l| println!("{l}"));
            println!("{}", outcome.summary);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_SUITE)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
