use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::Args;
use serde_json::json;

use cvqkd::estimator::{estimate_params, ParamEstimate};
use cvqkd::rates::{secret_rates, DetectorModel, Modulation};
use cvqkd::simkit::{self, BlockSpec};

use crate::{runtime, AttackArg, CliError, ConfigArg, PointArgs};

pub const REPLAY_CSV_VERSION: u32 = 1;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long, default_value_t = 10)]
    pub blocks: u32,
    #[arg(long = "total-pulses", default_value_t = 20_000)]
    pub total_pulses: usize,
    #[arg(long = "test-pulses", default_value_t = 5_000)]
    pub test_pulses: usize,
    #[arg(long = "reveal-pulses", default_value_t = 5_000)]
    pub reveal_pulses: usize,
    #[arg(long, value_enum, default_value_t = AttackArg::None)]
    pub attack: AttackArg,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Block file; a `.json` manifest with the parameters is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Block file written by `simulate`.
    pub file: PathBuf,
    #[arg(long, default_value_t = 0.606)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.041)]
    pub vel: f64,
    /// Calibrated shot noise the outcomes are divided by.
    #[arg(long = "shot-noise", default_value_t = 1.0)]
    pub shot_noise: f64,
    /// Efficiency used for the per-block effective rates.
    #[arg(long, default_value_t = 0.898)]
    pub beta: f64,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArg,
}

pub fn run_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let op = a.point.operating_point(0.898, 0.0)?;
    let spec = BlockSpec {
        total_pulses: a.total_pulses,
        test_pulses: a.test_pulses,
        reveal_pulses: a.reveal_pulses,
        seed: a.seed,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    for id in 0..a.blocks {
        let sent = simkit::modulate_block(&spec, id, &op.modulation).map_err(runtime)?;
        let block = simkit::transmit_measure(sent, &op.channel, &op.detector, a.attack.into(), a.seed)
            .map_err(runtime)?;
        simkit::write_block(&mut w, &block).map_err(runtime)?;
    }
    w.flush()?;
    let manifest = json!({
        "seed": a.seed,
        "blocks": a.blocks,
        "block": spec,
        "operating_point": op,
        "attack": format!("{:?}", a.attack),
    });
    let mut path = a.out.clone().into_os_string();
    path.push(".json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).map_err(runtime)?)?;
    println!("wrote {} blocks to {} (seed {})", a.blocks, a.out.display(), a.seed);
    Ok(())
}

pub fn run_replay(a: &ReplayArgs) -> Result<(), CliError> {
    let det = DetectorModel::new(a.eta, a.vel).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut r = BufReader::new(File::open(&a.file)?);
    let mut out: Box<dyn Write> = match &a.csv {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(out, "# qkd-replay v{REPLAY_CSV_VERSION} seed={} beta={}", a.seed, a.beta)?;
    writeln!(out, "{},d_shannon_eff,d_holevo_eff", ParamEstimate::CSV_HEADER)?;
    while let Some(block) = simkit::read_block(&mut r).map_err(runtime)? {
        let modulation = Modulation::new(block.modulation_variance).map_err(runtime)?;
        let revealed: Vec<(f64, f64)> = simkit::sift(&block)
            .map_err(runtime)?
            .iter()
            .filter(|p| p.revealed)
            .map(|p| (p.alice, p.bob))
            .collect();
        let seed = a.seed ^ block.block_id as u64;
        let est = estimate_params(&revealed, &det, &modulation, a.shot_noise, seed).map_err(runtime)?;
        let (ds, dh) = match secret_rates(&modulation, &est.conservative_channel(), &det, 0.0, a.beta, 0.0) {
            Ok(r) => (r.delta_shannon_eff, r.delta_holevo_eff),
            // Estimates beyond the physical range carry no key.
            Err(_) => (f64::NAN, f64::NAN),
        };
        writeln!(out, "{},{ds:.6},{dh:.6}", est.csv_row(block.block_id))?;
    }
    out.flush()?;
    Ok(())
}
