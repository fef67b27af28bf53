//! End-to-end runs behind the `drift` command line tool. Every run is a pure
//! function of its configuration and seed; artifacts are CSV point sets and
//! traces, 16-bit WAV files and a generator checkpoint.

mod config;
mod denoise;
mod output;
mod stft_check;
mod suite;
mod toy;

pub use config::{DataConfig, ExperimentConfig, GeneratorSection, MmdBandwidth, OutputConfig, SuiteConfig, Task, ToyConfig, ToyTarget};
pub use denoise::{run_denoise, DenoiseResult, EvalRow, SnapshotRow};
pub use stft_check::{run_stft_check, StftCheckResult};
pub use suite::{run_drift_eval, PropertyCheck, SuiteReport};
pub use toy::{run_toy2d, ToyResult};

use std::path::Path;

use crate::error::Result;

/// Outcome of [`run`]: a one-line JSON summary and whether every internal
/// check passed (only the property suite can fail without an error).
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub summary: serde_json::Value,
    pub passed: bool,
    /// Human-readable check results (property suite only).
    pub lines: Vec<String>,
}

/// Runs `cfg.task`, writing artifacts under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let seed = cfg.seed()?;
    std::fs::create_dir_all(out)?;
    let mut lines = Vec::new();
    let (summary, passed) = match cfg.task {
        Task::Toy2d => (run_toy2d(cfg, seed, Some(out))?.summary(), true),
        Task::Denoise | Task::Unpaired => (run_denoise(cfg, seed, Some(out))?.summary(), true),
        Task::DriftEval => {
            let report = run_drift_eval(cfg, seed)?;
            report.write(out)?;
            lines = report.lines();
            (report.summary(), report.passed())
        }
        Task::StftCheck => {
            let r = run_stft_check(cfg, seed)?;
            (r.summary(), r.passed())
        }
    };
    std::fs::write(out.join("summary.json"), format!("{summary}\n"))?;
    Ok(RunOutcome { summary, passed, lines })
}
