use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use clap::{Args, ValueEnum};
use serde_json::json;

use cvqkd::privamp::KeyWriter;
use cvqkd::session::{run_alice, run_bob, EveBound, HmacAuthenticator, SessionConfig, SessionOutcome};
use cvqkd::simkit::BlockSpec;

use crate::{runtime, AttackArg, CliError, PointArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundArg {
    Shannon,
    Holevo,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("transport").required(true).args(["listen", "connect"]))]
pub struct SessionArgs {
    #[arg(long, value_enum)]
    pub role: RoleArg,
    /// Accept one peer on this address.
    #[arg(long)]
    pub listen: Option<String>,
    /// Connect to a listening peer, retrying until `--connect-timeout`.
    #[arg(long)]
    pub connect: Option<String>,
    #[arg(long = "connect-timeout", default_value_t = 30.0)]
    pub connect_timeout: f64,
    /// Session manifest (required).
    #[arg(long, required = true)]
    pub config: Option<PathBuf>,
    /// Pre-shared authentication key.
    #[arg(long = "auth-key")]
    pub auth_key: String,
    /// Directory for `<role>.key`, `<role>.keys.jsonl` and `<role>.report.json`.
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
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
    /// Simulation seed shared by both ends.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Seeds Bob's hash seeds and Alice's bootstrap.
    #[arg(long = "entropy-seed", default_value_t = 1)]
    pub entropy_seed: u64,
    /// Level code rates, least significant level first.
    #[arg(long, value_parser = parse_rates, default_value = "0,0,0.42,0.95")]
    pub rates: [f64; 4],
    #[arg(long = "outer-rate", default_value_t = 0.998)]
    pub outer_rate: f64,
    #[arg(long = "code-seed", default_value_t = 1)]
    pub code_seed: u64,
    #[arg(long = "security-bits", default_value_t = 100)]
    pub security_bits: usize,
    #[arg(long, value_enum, default_value_t = BoundArg::Shannon)]
    pub bound: BoundArg,
    #[arg(long, value_enum, default_value_t = AttackArg::None)]
    pub attack: AttackArg,
    /// Relative amplitude of a sinusoidal transmission drift.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long = "drift-period", default_value_t = 10)]
    pub drift_period: u32,
    #[arg(long = "vacuum-samples", default_value_t = 10_000)]
    pub vacuum_samples: usize,
}

impl SessionArgs {
    pub fn session_config(&self) -> Result<SessionConfig, CliError> {
        let mut cfg = SessionConfig::desk();
        cfg.operating_point = self.point.operating_point(cfg.operating_point.beta, 0.0)?;
        cfg.block = BlockSpec {
            total_pulses: self.total_pulses,
            test_pulses: self.test_pulses,
            reveal_pulses: self.reveal_pulses,
            seed: self.seed,
        };
        cfg.blocks = self.blocks;
        cfg.multilevel.rates = self.rates;
        cfg.multilevel.outer_rate = self.outer_rate;
        cfg.multilevel.code_seed = self.code_seed;
        cfg.multilevel.block_len = cfg.block.key_pulses();
        cfg.security_bits = self.security_bits;
        cfg.bound = match self.bound {
            BoundArg::Shannon => EveBound::Shannon,
            BoundArg::Holevo => EveBound::Holevo,
        };
        cfg.attack = self.attack.into();
        cfg.drift = self.drift;
        cfg.drift_period = self.drift_period;
        cfg.vacuum_samples = self.vacuum_samples;
        cfg.entropy_seed = self.entropy_seed;
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn parse_rates(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|r| r.trim().parse::<f64>().map_err(|e| format!("'{r}': {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 4 level rates, got {}", v.len()))
}

fn open_stream(a: &SessionArgs) -> Result<TcpStream, CliError> {
    let stream = if let Some(addr) = &a.listen {
        let listener = TcpListener::bind(addr)?;
        eprintln!("listening on {}", listener.local_addr()?);
        listener.accept()?.0
    } else {
        let addr = a.connect.as_deref().expect("transport group is required");
        let deadline = Instant::now() + Duration::from_secs_f64(a.connect_timeout.max(0.0));
        loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(e) if Instant::now() >= deadline => {
                    return Err(CliError::Runtime(format!("cannot reach {addr}: {e}")))
                }
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        }
    };
    stream.set_nodelay(true)?;
    Ok(stream)
}

pub fn run(a: &SessionArgs) -> Result<(), CliError> {
    let cfg = a.session_config()?;
    let auth = HmacAuthenticator::new(a.auth_key.as_bytes()).map_err(|e| CliError::Usage(e.to_string()))?;
    let role = match a.role {
        RoleArg::Alice => "alice",
        RoleArg::Bob => "bob",
    };
    fs::create_dir_all(&a.out_dir)?;
    let path = |suffix: &str| a.out_dir.join(format!("{role}.{suffix}"));
    let mut writer = KeyWriter::create(&path("key"), &path("keys.jsonl")).map_err(runtime)?;
    let stream = open_stream(a)?;
    let mut link = cfg.simulated_link();
    let outcome: SessionOutcome = match a.role {
        RoleArg::Alice => run_alice(stream, &cfg, &auth, &mut link, Some(&mut writer)),
        RoleArg::Bob => run_bob(stream, &cfg, &auth, &mut link, Some(&mut writer)),
    }
    .map_err(runtime)?;
    drop(writer);

    let report = &outcome.report;
    let doc = json!({
        "seed": a.seed,
        "entropy_seed": a.entropy_seed,
        "config": cfg,
        "report": report,
    });
    fs::write(path("report.json"), serde_json::to_string_pretty(&doc).map_err(runtime)?)?;
    println!(
        "{role}: {}/{} blocks confirmed, {} key bits, p_fail {:.3}, net {:.1} b/s (projected {:.0} b/s at {} Hz)",
        report.blocks_confirmed,
        report.blocks_attempted,
        report.key_bits,
        report.p_fail,
        report.net_rate_bps,
        report.projection.net_rate_bps,
        report.projection.rep_rate_hz
    );
    if let Some(alarm) = &report.alarm {
        println!("{role}: alarm: {alarm}");
    }
    if report.blocks_confirmed == 0 {
        return Err(CliError::Runtime("no block confirmed".into()));
    }
    Ok(())
}
