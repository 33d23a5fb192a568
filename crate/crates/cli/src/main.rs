//! `rtjscc` command-line front end.
//!
//! Every command prints one JSON [`report::RunReport`] on stdout (or to
//! `--out`) and a short human summary on stderr.

mod commands;
mod report;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use report::{exit_code, RunReport, EXIT_INTERNAL};

#[derive(Debug, Parser)]
#[command(name = "rtjscc", version, about = "Real-time joint source-channel coding solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Problem instance (JSON).
    instance: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "RTJSCC_THREADS", default_value_t = 0)]
    threads: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an instance file.
    Validate {
        /// Problem instance (JSON).
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve by sequential decomposition (finite or discounted horizon).
    Solve {
        #[command(flatten)]
        common: Common,
        /// Enumeration cap for encoder assignments per node and for memory-update rules.
        #[arg(long)]
        cap: Option<u64>,
        /// Merge tolerance for information-state atoms.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Brute-force search over primitive designs.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Maximum number of (encoder, memory-update) designs.
        #[arg(long)]
        cap: Option<u128>,
        /// Also run the solver and report the difference.
        #[arg(long)]
        cross_check: bool,
    },
    /// Monte Carlo estimate of a design's expected distortion.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Design file, or a saved `solve` report.
        #[arg(long, required_unless_present = "from_solve", conflicts_with = "from_solve")]
        design: Option<PathBuf>,
        /// Solve the instance first and simulate the optimum.
        #[arg(long)]
        from_solve: bool,
        /// Number of trajectories.
        #[arg(short = 'n', long = "trajectories", default_value_t = 10_000)]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-trajectory CSV records here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Merge tolerance used when rebuilding or solving.
        #[arg(long)]
        tol: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Worker threads may all panic at once; report it a single time.
    let once = std::sync::Once::new();
    std::panic::set_hook(Box::new(move |info| {
        once.call_once(|| eprintln!("internal error: {info}"));
    }));
    let outcome = catch_unwind(AssertUnwindSafe(|| commands::run(cli.command)));
    match outcome {
        Ok((report, out)) => {
            let code = report.error.as_ref().map_or(0, |e| e.exit_code);
            report.summarize();
            if let Err(e) = emit(&report, out.as_deref()) {
                eprintln!("error: {e}");
                return ExitCode::from(exit_code(&e));
            }
            ExitCode::from(code)
        }
        Err(_) => {
            eprintln!("error: internal failure (panic)");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn emit(report: &RunReport, out: Option<&std::path::Path>) -> rtjscc::Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|source| rtjscc::Error::Io { path: path.display().to_string(), source }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
