use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use qinvert_core::scenario::{list_scenarios, run_scenario, validate, ScenarioError, OUTPUT_ROOT_ENV};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "qinvert", version, about = "Recover signals driving a modeled quantum probe from its measurement record")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenario files (or bundled scenario names).
    Run {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Output root; each scenario writes into <DIR>/<scenario name>.
        #[arg(long, value_name = "DIR", env = OUTPUT_ROOT_ENV, default_value = "runs")]
        out: PathBuf,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of scenario files run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a scenario file without running it.
    Validate { file: PathBuf },
    /// List the bundled scenarios.
    List,
}

fn code(e: &ScenarioError) -> u8 {
    match e {
        ScenarioError::Validation(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for (name, desc) in list_scenarios() {
                println!("{name:<24} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { file } => match validate(&file) {
            Ok(report) => {
                print!("{report}");
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", file.display());
                ExitCode::from(code(&e))
            }
        },
        Command::Run { files, out, seed, jobs } => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("cannot start worker threads: {e}");
                    return ExitCode::from(EXIT_RUNTIME);
                }
            };
            let results: Vec<_> = pool.install(|| files.par_iter().map(|f| (f, run_scenario(f, &out, seed))).collect());
            let mut worst = 0u8;
            for (file, r) in results {
                match r {
                    Ok((manifest, dir)) => println!(
                        "{}: {} artifacts in {} (seed {})",
                        manifest.scenario,
                        manifest.artifacts.len(),
                        dir.display(),
                        manifest.seed
                    ),
                    Err(e) => {
                        eprintln!("{}: {e}", file.display());
                        worst = worst.max(code(&e));
                    }
                }
            }
            ExitCode::from(worst)
        }
    }
}
