//! `qkd`: rate tables and curves, code design, simulated block files and
//! end-to-end sessions between two processes.
//!
//! Exit status: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use cvqkd::rates::{ChannelModel, DetectorModel, Modulation, OperatingPoint};
use cvqkd::simkit::AttackModel;

mod codes;
mod config;
mod rates;
mod session;
mod simulate;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Shorthand for turning library errors into runtime failures.
pub fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "qkd", version, about = "CV-QKD post-processing toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mutual informations and secret rates at one point, or a CSV curve.
    #[command(args_override_self = true)]
    Rates(rates::RatesArgs),
    /// Run Alice or Bob over TCP.
    #[command(args_override_self = true)]
    Session(session::SessionArgs),
    /// Build or audit LDPC parity-check files.
    #[command(subcommand)]
    Codes(codes::CodesCommand),
    /// Write simulated, measured blocks to a replay file.
    #[command(args_override_self = true)]
    Simulate(simulate::SimulateArgs),
    /// Re-run parameter estimation over a replay file.
    #[command(args_override_self = true)]
    Replay(simulate::ReplayArgs),
}

/// Physical parameters; defaults are the 25 km link.
#[derive(Debug, Clone, Args)]
pub struct PointArgs {
    /// Channel transmission.
    #[arg(long = "T", default_value_t = 0.302)]
    pub transmission: f64,
    /// Excess noise, shot-noise units.
    #[arg(long, default_value_t = 0.005, allow_negative_numbers = true)]
    pub eps: f64,
    /// Detector efficiency.
    #[arg(long, default_value_t = 0.606)]
    pub eta: f64,
    /// Electronic noise, shot-noise units.
    #[arg(long, default_value_t = 0.041)]
    pub vel: f64,
    /// Modulation variance V_A.
    #[arg(long, default_value_t = 18.5)]
    pub va: f64,
    /// Effective repetition rate, symbols per second.
    #[arg(long, default_value_t = 350_000.0)]
    pub rep: f64,
}

impl PointArgs {
    pub fn operating_point(&self, beta: f64, p_fail: f64) -> Result<OperatingPoint, CliError> {
        let bad = |e: cvqkd::rates::RateError| CliError::Usage(e.to_string());
        Ok(OperatingPoint {
            modulation: Modulation::new(self.va).map_err(bad)?,
            channel: ChannelModel::new(self.transmission, self.eps).map_err(bad)?,
            detector: DetectorModel::new(self.eta, self.vel).map_err(bad)?,
            rep_rate: self.rep,
            beta,
            p_fail,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    None,
    InterceptResend,
}

impl From<AttackArg> for AttackModel {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::None => AttackModel::None,
            AttackArg::InterceptResend => AttackModel::InterceptResend,
        }
    }
}

fn run(args: Vec<OsString>) -> Result<(), CliError> {
    let args = config::expand(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError::Usage(String::new()))
            };
        }
    };
    match cli.command {
        Command::Rates(a) => rates::run(&a),
        Command::Session(a) => session::run(&a),
        Command::Codes(c) => codes::run(&c),
        Command::Simulate(a) => simulate::run_simulate(&a),
        Command::Replay(a) => simulate::run_replay(&a),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("qkd: {msg}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}

/// Path-valued `--config` shared by every subcommand; the file itself has
/// already been merged into the arguments by the time clap sees them.
#[derive(Debug, Clone, Args)]
pub struct ConfigArg {
    /// Flat `key = value` file mirroring the long flags; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}
