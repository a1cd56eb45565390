use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weak_euler_cli::{list_experiments, run, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(name = "weak-euler", version, about = "Weak-error experiments for Euler schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List experiments, their fields and the claim each checks.
    List,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            print!("{}", list_experiments());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            threads,
            seed,
            output,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = output
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from(format!("out/{}", cfg.experiment.name())));
            let out = match run(&cfg, threads) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Err(e) = write_outputs(&out, &dir) {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            for c in &out.summary.checks {
                let tag = if c.passed { "pass" } else { "FAIL" };
                let value = c.value.map(|v| format!(" = {v:.6e}")).unwrap_or_default();
                let note = if c.advisory { " (advisory)" } else { "" };
                println!("{tag} {}{value} [{}]{note}", c.name, c.limit);
            }
            println!(
                "{}: {} in {:.1} s, outputs in {}",
                cfg.experiment.name(),
                if out.summary.passed { "passed" } else { "failed" },
                out.wall_seconds,
                dir.display()
            );
            ExitCode::SUCCESS
        }
    }
}
