//! Thin command-line front end over [`omnifd::experiment`].

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use omnifd::experiment::{run_scenario_to_dir, summarize, summarize_file, summary_table, Scenario};

#[derive(Parser)]
#[command(name = "omnifd", version, about = "Omni-surface full-duplex link sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and write records, manifest and traces.
    Run {
        /// Scenario description (JSON).
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for the CSV, manifest and traces.
        #[arg(long)]
        out: PathBuf,
        /// Base seed mixed into every channel and optimizer draw.
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Aggregate a records CSV into per-point means.
    Summarize {
        /// Records CSV produced by `run`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Directory for the summary outputs; defaults to the input's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed_base,
            parallel,
        } => {
            let scenario = match Scenario::from_file(&scenario) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run_scenario_to_dir(&scenario, &out, seed_base, parallel) {
                Ok(records) => {
                    let rows = summarize(&records);
                    print!("{}", summary_table(&rows));
                    let clean = records
                        .iter()
                        .all(|r| r.status == "converged" || r.status == "max_iters");
                    if clean {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("warning: some points were infeasible or failed");
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Summarize { input, out } => match summarize_file(&input, out.as_deref()) {
            Ok(path) => {
                match omnifd::experiment::read_records_csv(&input) {
                    Ok(records) => print!("{}", summary_table(&summarize(&records))),
                    Err(_) => {}
                }
                eprintln!("summary written to {}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
