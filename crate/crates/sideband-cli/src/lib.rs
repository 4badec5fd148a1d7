//! Command-line front end: configuration, scenario orchestration, record and
//! spectrum persistence.

pub mod codec;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sideband", version, about = "Stroboscopic qubit spectrum-analyzer simulations and device calculators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration (required by simulate, spectrum, fit, asymmetry).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a measurement record and its manifest.
    Simulate,
    /// Per-preparation power spectra.
    Spectrum(RecordArgs),
    /// Lorentzian fits, calibrated areas and phonon numbers.
    Fit(RecordArgs),
    /// Measured and predicted n̄_e − n̄_g from an alternating record.
    Asymmetry(RecordArgs),
    /// Membrane mass, coupling, softening, decoherence and fidelity numbers.
    Device,
    /// Fluxonium spectrum, chain-coupled sweep and gap-distance inference.
    Fluxonium,
    /// AC-Stark shift and dressed decoherence rates.
    Stark,
    /// Diósi–Penrose collapse timescales.
    Dp,
    /// Cross-checks of the imperfect maps against joint qubit–oscillator evolution.
    Oracle,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RecordArgs {
    /// Analyze an existing record file instead of simulating one.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

/// Runs the CLI and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
