use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use renorm_plap_cli::{init_thread_pool, run, Command, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "renorm-plap",
    version,
    about = "Stochastic p-Laplace solver and property checks"
)]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let text = match fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::parse(&text, args.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.unwrap_or_else(|| cfg.out.clone());
    match run(&cfg, &out) {
        Ok(outcome) => {
            let failed = outcome.failed();
            for c in &outcome.checks {
                println!(
                    "{} {} [{}] value={} threshold={}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.check,
                    c.params,
                    c.value,
                    c.threshold
                );
            }
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                let names: Vec<&str> = failed.iter().map(|c| c.check.as_str()).collect();
                eprintln!("failed checks: {}", names.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
