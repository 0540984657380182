use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dephasim::experiment::{run_experiment, RunError, RunOptions};

/// Run an experiment described by a TOML config file.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Args {
    /// Experiment config.
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path, overriding the config. A manifest is written alongside.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "DEPHASIM_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let opts = RunOptions { seed: args.seed, output: args.output, threads: args.threads };
    match run_experiment(&text, &opts) {
        Ok(outcome) => {
            print!("{}", outcome.rendered.summary);
            if let Some(path) = &outcome.output {
                eprintln!(
                    "wrote {} rows to {} (seed {}, {:.2} s)",
                    outcome.rendered.rows,
                    path.display(),
                    outcome.seed,
                    outcome.wall_time
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let prefix = match &e {
                RunError::Config(_) => args.config.display().to_string(),
                _ => "error".to_string(),
            };
            eprintln!("{prefix}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
