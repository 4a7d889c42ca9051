use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bimonn::checkpoint::Checkpoint;
use bimonn::experiments::suite::{run_suite, SuiteSpec};
use bimonn::experiments::{binarize_checkpoint, duality_probe, run_experiment, BinarizeOutcome, ExperimentSpec};
use bimonn::Error;
use clap::{Parser, Subcommand};

/// Train binary morphological networks and read back their operators.
///
/// MNIST experiments read images from `mnist_path` in the spec, or from the
/// BIMONN_MNIST environment variable (a directory with the standard IDX
/// files, or a single IDX image file).
#[derive(Parser)]
#[command(name = "bimonn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment and print its report.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides `output_dir` from the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of a suite file; writes results.csv and results.md.
    Suite {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the morphological pipeline of a checkpoint.
    Binarize {
        #[arg(long)]
        ckpt: PathBuf,
    },
    /// Train a spec and its dual (complemented inputs, dual operator).
    Duality {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAILED: u8 = 1;
const EXIT_BAD_CONFIG: u8 = 2;

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) | Error::InvalidIdx(_) => ExitCode::from(EXIT_BAD_CONFIG),
        _ => ExitCode::from(EXIT_FAILED),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("error: {e}"),
    }
}

fn load_spec(path: &Path, out: Option<PathBuf>) -> Result<ExperimentSpec, ExitCode> {
    let mut spec = ExperimentSpec::load(path).map_err(|e| match e {
        Error::Io(_) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            ExitCode::from(EXIT_BAD_CONFIG)
        }
        other => exit_for(&other),
    })?;
    if out.is_some() {
        spec.output_dir = out;
    }
    Ok(spec)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, out } => {
            let spec = match load_spec(&spec, out) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match run_experiment(&spec) {
                Ok(run) => {
                    let r = &run.report;
                    eprintln!(
                        "{}: DICE error {:.4}, activation {}, {} iterations, {:.1}s",
                        r.label,
                        r.final_dice_error,
                        r.activation_marks(),
                        r.iterations_run,
                        r.wall_clock_seconds
                    );
                    print_json(r);
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Suite { grid, out } => {
            let suite = match SuiteSpec::load(&grid) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_BAD_CONFIG);
                }
            };
            match run_suite(&suite, &out) {
                Ok(rows) => {
                    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
                    eprintln!("{} cells, {failed} failed; results in {}", rows.len(), out.display());
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_FAILED)
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Binarize { ckpt } => {
            let ck = match Checkpoint::load(&ckpt) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_BAD_CONFIG);
                }
            };
            match binarize_checkpoint(&ck) {
                Ok(outcome) => {
                    print_json(&outcome);
                    match outcome {
                        BinarizeOutcome::Pipeline { agreeing, checked, .. } if agreeing == checked => ExitCode::SUCCESS,
                        _ => ExitCode::from(EXIT_FAILED),
                    }
                }
                Err(e) => exit_for(&e),
            }
        }
        Command::Duality { spec, out } => {
            let spec = match load_spec(&spec, out) {
                Ok(s) => s,
                Err(code) => return code,
            };
            match duality_probe(&spec) {
                Ok(report) => {
                    eprintln!(
                        "primal {:.4} / dual {:.4}, convergence ratio {}",
                        report.primal.final_dice_error,
                        report.dual.final_dice_error,
                        report.convergence_ratio.map_or("n/a".into(), |r| format!("{r:.2}"))
                    );
                    print_json(&report);
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
