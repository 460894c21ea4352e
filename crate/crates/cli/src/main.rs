use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qstat_cli::{exit, load_scenario, run, CliError, Overrides, RunOptions};
use qstat_core::IdentityId;

#[derive(Parser)]
#[command(name = "qstat", version, about = "Quantum statistical mechanics checks over scenario grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task in a scenario and write reports.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Stop at the first failing unit of work.
        #[arg(long)]
        fail_fast: bool,
        #[arg(long)]
        fd_step: Option<f64>,
        #[arg(long)]
        atol: Option<f64>,
        #[arg(long)]
        rtol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Print every identity tag with its relation.
    ListIdentities,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            output,
            fail_fast,
            fd_step,
            atol,
            rtol,
            seed,
            threads,
        } => {
            let overrides = Overrides {
                fd_step,
                atol,
                rtol,
                seed,
            };
            match run_scenario(&scenario, output, &overrides, &RunOptions { fail_fast, threads }) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit::INVALID
                }
            }
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!(
                    "{}: ok ({} ensemble, {} grid points, {} tasks)",
                    s.name,
                    s.ensemble.kind(),
                    s.scheduled_builds(),
                    s.tasks.len()
                );
                exit::PASS
            }
            Err(e) => {
                eprintln!("error: {e}");
                exit::INVALID
            }
        },
        Command::ListIdentities => {
            let mut table = None;
            for id in IdentityId::ALL {
                if id.table() != table {
                    table = id.table();
                    println!(
                        "{}",
                        match table {
                            Some(1) => "canonical (T1)",
                            Some(2) => "grand-canonical (T2)",
                            Some(_) => "generalized (T3)",
                            None => "other",
                        }
                    );
                }
                println!("  {:<14} {}", id.tag(), id.relation());
            }
            exit::PASS
        }
    };
    ExitCode::from(code as u8)
}

fn run_scenario(
    path: &Path,
    output: Option<PathBuf>,
    overrides: &Overrides,
    options: &RunOptions,
) -> Result<i32, CliError> {
    let mut scenario = load_scenario(path)?;
    overrides.apply(&mut scenario)?;
    let report = run(&scenario, options)?;
    let s = report.summary;
    println!(
        "{}: {} checks, {} passed, {} failed, {} errors ({:.2} s)",
        report.scenario, s.attempted, s.passed, s.failed, s.errors, report.wall_time_seconds
    );
    for r in report.checks.iter().filter(|r| !r.passed()).take(20) {
        println!(
            "  {:?} task {} point {} {} {} {}",
            r.status,
            r.task,
            r.point_index,
            r.check,
            r.instance,
            r.error.as_deref().unwrap_or_default()
        );
    }
    if let Some(dir) = output.or_else(|| scenario.output.dir.clone()) {
        report.write(&dir)?;
        println!("reports written to {}", dir.display());
    }
    Ok(if report.all_passed() { exit::PASS } else { exit::FAILURES })
}
