mod commands;
mod fail;
mod lock;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "eseize", version, about = "Early-training dynamics, gradual unfreezing and OOD robustness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write trace, report and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the seed list of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (k, seed) pair and write the delta table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated k values including 0, or "auto".
        #[arg(long, default_value = "auto")]
        ks: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect stabilization in each metric column of a trace.
    Detect {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 3)]
        tau: usize,
        #[arg(long, default_value_t = 0.02)]
        eps: f64,
        /// Defaults to the stride recorded in the trace.
        #[arg(long)]
        stride: Option<u64>,
        /// Defaults to detection.json next to the trace.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Head-only run, k-hat per metric, then the winning rate against random k.
    Autorun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Delta-vs-k curves and normalized dynamics from stored runs.
    Report {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: ReportFormat,
        /// Defaults to the runs directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Svg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => commands::train(&config, seed, &out),
        Command::Sweep { config, ks, out } => commands::sweep(&config, &ks, &out),
        Command::Detect {
            trace,
            tau,
            eps,
            stride,
            out,
        } => commands::detect(&trace, tau, eps, stride, out.as_deref()),
        Command::Autorun { config, out } => commands::autorun(&config, &out),
        Command::Report { runs, format, out } => {
            let format = match format {
                ReportFormat::Csv => report::Format::Csv,
                ReportFormat::Svg => report::Format::Svg,
            };
            commands::report(&runs, format, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
