//! `i3d`: train, trace, analyze, simulate and compare from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use instant3d_sim::FusionMode;

#[derive(Parser)]
#[command(name = "i3d", version, about = "Decomposed hash-grid radiance fields and accelerator model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene override: `toy:<name>` or a manifest path.
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Iteration count override.
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Accept color grids or update rates above the density ones.
    #[arg(long)]
    pub allow_inverted: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a field and write the loss history and summary.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory (defaults to the config's report dir or `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record embedding-table accesses of a short training run.
    Trace {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Characterise the address stream of a trace.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        window: usize,
        #[arg(long, value_enum, default_value_t = WindowArg::Tiled)]
        mode: WindowArg,
    },
    /// Replay a trace through the accelerator model.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        /// Run configuration whose `[sim]` table is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        no_frm: bool,
        #[arg(long)]
        no_bum: bool,
        #[arg(long, value_enum)]
        fusion: Option<FusionArg>,
    },
    /// Train two configurations on the same scene and tabulate them.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        decomposed: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u32>,
        /// Also trace and simulate both configurations.
        #[arg(long)]
        simulate: bool,
        #[arg(long)]
        allow_inverted: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WindowArg {
    Tiled,
    Sliding,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Level0,
    Level1,
    Level2,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Level0 => FusionMode::Level0,
            FusionArg::Level1 => FusionMode::Level1,
            FusionArg::Level2 => FusionMode::Level2,
        }
    }
}

/// Exit 2 for bad invocations and configs, 1 for everything that fails later.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { run, out } => commands::train(&run, out),
        Command::Trace { run, out } => commands::trace(&run, &out),
        Command::Analyze { trace, out, window, mode } => commands::analyze(&trace, &out, window, mode),
        Command::Simulate { trace, config, report, no_frm, no_bum, fusion } => {
            commands::simulate(&trace, config.as_deref(), &report, no_frm, no_bum, fusion.map(Into::into))
        }
        Command::Compare { baseline, decomposed, out, seed, iterations, simulate, allow_inverted } => {
            commands::compare(&baseline, &decomposed, &out, seed, iterations, simulate, allow_inverted)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
