//! Experiment runner for `weak-euler`.
//!
//! One JSON config per experiment. A run writes `results.csv`, `plotdata.csv`,
//! `summary.json` and `run_info.json` to the output directory.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub use config::{CatalogSpec, Experiment, ExperimentConfig, Mode, Thresholds};
pub use experiments::{run_experiment, Check, Outcome, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] weak_euler::Error),
    #[error("{0}")]
    Io(String),
}

/// Contents of `summary.json`. Identical config and seed give identical bytes.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: &'static str,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub estimates: Value,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Contents of `run_info.json`: everything that varies between identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunInfo {
    pub wall_seconds: f64,
    pub threads: usize,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub outcome: Outcome,
    pub wall_seconds: f64,
    pub threads: usize,
}

impl RunOutput {
    pub fn summary_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("serializable");
        s.push('\n');
        s
    }
}

/// Validate and run on a pool of `threads` workers (all cores when `None`).
pub fn run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Io(e.to_string()))?;
    let start = Instant::now();
    let outcome = pool.install(|| run_experiment(cfg))?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let summary = Summary {
        experiment: cfg.experiment.name(),
        version: VERSION,
        config: cfg.clone(),
        estimates: outcome.estimates.clone(),
        checks: outcome.checks.clone(),
        passed: outcome.passed(),
    };
    Ok(RunOutput {
        summary,
        outcome,
        wall_seconds,
        threads: pool.current_num_threads(),
    })
}

fn write_table(path: &Path, table: &Table) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&table.header).map_err(io)?;
    for row in &table.rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Write the four output files into `dir`, creating it if needed.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    write_table(&dir.join("results.csv"), &out.outcome.results)?;
    write_table(&dir.join("plotdata.csv"), &out.outcome.plot)?;
    fs::write(dir.join("summary.json"), out.summary_json()).map_err(io)?;
    let info = RunInfo {
        wall_seconds: out.wall_seconds,
        threads: out.threads,
        output_dir: dir.to_path_buf(),
    };
    fs::write(dir.join("run_info.json"), serde_json::to_string_pretty(&info).expect("serializable")).map_err(io)?;
    Ok(())
}

/// Text printed by `weak-euler list`, one block per experiment.
pub fn list_experiments() -> String {
    let mut s = String::new();
    for e in Experiment::ALL {
        s.push_str(&format!("{}\n    claim:  {}\n    fields: {}\n", e.name(), e.claim(), e.fields()));
    }
    s
}
