//! `lscale`: batch driver for encoding-model fits, inter-subject correlation
//! and the statistics on top of them.

mod analyze;
mod cache;
mod error;
mod fit;
mod out;
mod report;
mod store;
mod study;
mod synth;

use clap::{Parser, Subcommand};

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "lscale", version, about)]
struct Cli {
    /// Worker threads (default: LS_THREADS, else all cores).
    #[arg(long, global = true, env = "LS_THREADS")]
    threads: Option<usize>,
    /// Report errors as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic study with known ground truth.
    Synth(synth::SynthArgs),
    /// Nested cross-validated ridge scores for each model.
    Fit(fit::FitArgs),
    /// Inter-subject correlation from split-half group averages.
    Isc(fit::IscArgs),
    /// Statistics over fitted score maps.
    Analyze(analyze::AnalyzeArgs),
    /// Consolidated JSON and tables from a results directory.
    Report(report::ReportArgs),
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::runtime(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Fit(a) => fit::fit(a),
        Command::Isc(a) => fit::run_isc(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Report(a) => report::run(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            if std::env::args().any(|a| a == "--json") {
                eprintln!("{}", CliError::validation(e.to_string().trim_end()).to_json());
                std::process::exit(2);
            }
            e.exit();
        }
    };
    if let Err(e) = dispatch(&cli) {
        if cli.json {
            eprintln!("{}", e.to_json());
        } else {
            eprintln!("error: {e}");
        }
        std::process::exit(e.exit_code());
    }
}
