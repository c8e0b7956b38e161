use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ergolab::cli::{run, Command};

#[derive(Parser)]
#[command(
    name = "ergolab",
    version,
    about = "Rank-one skew products and divergent double averages"
)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write the stage table.
    Build,
    /// Check the disjointness/coincidence windows and the conjugacy.
    Verify,
    /// Compute the averages series and the divergence report.
    Series,
    /// Like `series` without the CSV.
    Report,
    /// Monte Carlo cross-check of the suspension functionals.
    McCheck,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if args.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();

    let command = match args.command {
        Cmd::Build => Command::Build,
        Cmd::Verify => Command::Verify,
        Cmd::Series => Command::Series,
        Cmd::Report => Command::Report,
        Cmd::McCheck => Command::McCheck,
    };
    let text = match &args.config {
        Some(path) => match fs::read_to_string(path) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    match run(command, text.as_deref(), args.out.as_deref()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
