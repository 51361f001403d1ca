//! `snswf` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical or
//! runtime failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{
    ChannelArgs, MethodArgs, OutputArgs, PolicyArgs, PsdChannelArgs, SimulationArgs, SobiArgs,
    SpectralArgs, WienerArgs,
};

#[derive(Parser, Debug)]
#[command(
    name = "snswf",
    version,
    about = "Separation-based Wiener denoising of multichannel recordings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic two-tone scenario: writes record.csv and truth.json.
    Simulate {
        /// Flat key = value config file; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        simulation: SimulationArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Separate reference channels with SOBI: writes sources, mixing,
    /// unmixing and whitener CSVs plus sobi.json.
    Sobi {
        /// Input record CSV
        input: PathBuf,
        /// Flat key = value config file; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        channels: ChannelArgs,
        #[command(flatten)]
        sobi: SobiArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// AR power spectrum, peaks and peak-ratio SNR of one channel: writes
    /// psd.csv and psd.json.
    Psd {
        /// Input record CSV
        input: PathBuf,
        /// Flat key = value config file; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        channel: PsdChannelArgs,
        #[command(flatten)]
        spectral: SpectralArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Classic and/or separation-based Wiener denoising: writes denoised
    /// series, spectra, filter taps and report.json.
    Denoise {
        /// Input record CSV
        input: PathBuf,
        /// Flat key = value config file; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        channels: ChannelArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        wiener: WienerArgs,
        #[command(flatten)]
        spectral: SpectralArgs,
        #[command(flatten)]
        sobi: SobiArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Parses `args` (program name first), runs the command and prints its
/// summary. Returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::run(cli.command) {
        Ok(summary) => {
            for line in summary {
                println!("{line}");
            }
            0
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}
