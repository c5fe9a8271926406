//! Alice and Bob endpoints distilling keys block by block over an
//! authenticated, reliable byte stream.
//!
//! Per block, after Alice announces the pulse roles, every frame flows from
//! Bob to Alice (sifting, estimation reveal, syndromes, hash seeds) until
//! Alice answers with a key confirmation; Bob acknowledges it and the block
//! contributes key bits only when both digests match.

mod protocol;
mod link;
mod transport;
mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::EstimationError;
use crate::privamp::{HashSpec, PrivampError};
use crate::rates::{OperatingPoint, RateError};
use crate::recon::{
    design_quantizer, GaussianLink, MultilevelSpec, QuantizerConfig, ReconError, WidthRule,
};
use crate::simkit::{AttackModel, BlockSpec, SimError};

pub use link::{pack_roles, unpack_roles, BobBlock, QuantumSource, SimulatedLink};
pub use protocol::{run_alice, run_bob, run_loopback};
pub use transport::{loopback_pair, PipeEnd};
pub use wire::{
    Authenticator, Frame, HmacAuthenticator, MsgType, HEADER_LEN, MAGIC, MAX_PAYLOAD, TAG_LEN,
    VERSION,
};

/// Bits of the key-confirmation digest, subtracted from every key.
pub const CONFIRM_DIGEST_BITS: usize = 32;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("authentication failed on frame type {msg_type} (block {block_id})")]
    Authentication { msg_type: u8, block_id: u32 },
    #[error("peer aborted the session: {0}")]
    PeerAborted(String),
    /// The peer stopped the session on a security alarm; no key is at risk.
    #[error("peer raised a security alarm: {0}")]
    PeerAlarm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Rates(#[from] RateError),
    #[error(transparent)]
    Reconciliation(#[from] ReconError),
    #[error(transparent)]
    Privacy(#[from] PrivampError),
}

pub type Result<T> = std::result::Result<T, SessionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Alice,
    Bob,
}

/// Which eavesdropper bound sets the key length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EveBound {
    #[default]
    Shannon,
    Holevo,
}

/// Test hooks for failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Bob flips one syndrome bit of this block before sending it.
    CorruptSyndrome { block_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub operating_point: OperatingPoint,
    pub block: BlockSpec,
    pub blocks: u32,
    pub multilevel: MultilevelSpec,
    pub hash: HashSpec,
    pub security_bits: usize,
    pub width_rule: WidthRule,
    pub bound: EveBound,
    pub attack: AttackModel,
    pub drift: f64,
    pub drift_period: u32,
    pub lo_level: f64,
    pub vacuum_samples: usize,
    pub cross_check_sigmas: f64,
    /// δ of the entanglement-breaking alarm ε̂ ≥ 2(1 − δ).
    pub eb_delta: f64,
    /// Seeds Bob's hash-seed generator and Alice's bootstrap.
    pub entropy_seed: u64,
    pub fault: Option<Fault>,
}

impl SessionConfig {
    /// 25 km operating point with 10⁴-symbol blocks.
    pub fn desk() -> Self {
        SessionConfig {
            operating_point: OperatingPoint::link_25km(),
            block: BlockSpec {
                total_pulses: 20_000,
                test_pulses: 5_000,
                reveal_pulses: 5_000,
                seed: 1,
            },
            blocks: 10,
            multilevel: MultilevelSpec::desk(),
            hash: HashSpec::standard(),
            security_bits: 100,
            width_rule: WidthRule::default(),
            bound: EveBound::Shannon,
            attack: AttackModel::None,
            drift: 0.0,
            drift_period: 10,
            lo_level: 1.0,
            vacuum_samples: 10_000,
            cross_check_sigmas: 3.0,
            eb_delta: 0.05,
            entropy_seed: 1,
            fault: None,
        }
    }

    pub fn key_symbols(&self) -> usize {
        self.block.key_pulses()
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        self.multilevel.validate()?;
        if self.multilevel.block_len != self.key_symbols() {
            return Err(SessionError::Config(format!(
                "code length {} differs from key pulses per block {}",
                self.multilevel.block_len,
                self.key_symbols()
            )));
        }
        let secret = self.multilevel.coded_levels().count() * self.key_symbols();
        if secret > self.hash.max_input_bits() {
            return Err(SessionError::Config(format!(
                "{secret} reconciled bits exceed the hash input size"
            )));
        }
        if self.drift.abs() >= 1.0 || !(self.lo_level > 0.0) {
            return Err(SessionError::Config("drift or LO level out of range".into()));
        }
        Ok(())
    }

    pub fn nominal_link(&self) -> GaussianLink {
        let op = &self.operating_point;
        GaussianLink::from_model(&op.modulation, &op.channel, &op.detector)
    }

    /// Quantizer both sides derive from the nominal operating point.
    pub fn quantizer(&self) -> Result<QuantizerConfig> {
        Ok(design_quantizer(&self.nominal_link(), self.width_rule)?.config)
    }

    pub fn simulated_link(&self) -> SimulatedLink {
        let op = &self.operating_point;
        SimulatedLink {
            block: self.block,
            modulation: op.modulation,
            channel: op.channel,
            detector: op.detector,
            attack: self.attack,
            drift: self.drift,
            drift_period: self.drift_period,
            lo_level: self.lo_level,
            vacuum_samples: self.vacuum_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockStatus {
    Confirmed,
    DecodeFailed,
    EstimationAlarm,
    NoKey,
    ConfirmMismatch,
    SecurityAlarm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block_id: u32,
    pub status: BlockStatus,
    pub t_true: Option<f64>,
    pub t_hat: Option<f64>,
    pub eps_hat: Option<f64>,
    pub t_test: Option<f64>,
    pub beta: Option<f64>,
    pub delta_i_eff: Option<f64>,
    pub key_bits: usize,
    pub disclosed_bits: usize,
    pub decode_iterations: Option<[usize; 4]>,
    pub decode_seconds: f64,
    pub block_seconds: f64,
}

impl BlockRecord {
    fn new(block_id: u32) -> Self {
        BlockRecord {
            block_id,
            status: BlockStatus::DecodeFailed,
            t_true: None,
            t_hat: None,
            eps_hat: None,
            t_test: None,
            beta: None,
            delta_i_eff: None,
            key_bits: 0,
            disclosed_bits: 0,
            decode_iterations: None,
            decode_seconds: 0.0,
            block_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub msg_type: MsgType,
    pub block_id: u32,
    pub payload_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub rep_rate_hz: f64,
    /// Key bits per attempted key symbol, times the repetition rate.
    pub net_rate_bps: f64,
    /// Mean ΔI_eff of the confirmed blocks times (1 − p_fail) and the rate.
    pub effective_rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub role: Role,
    pub blocks_attempted: usize,
    pub blocks_confirmed: usize,
    pub decode_attempts: usize,
    pub decode_failures: usize,
    pub p_fail: f64,
    pub key_bits: usize,
    /// Includes dropped blocks: their syndromes were public anyway.
    pub disclosed_bits: usize,
    pub symbols_per_block: usize,
    pub wall_seconds: f64,
    pub net_rate_bps: f64,
    pub decode_seconds: f64,
    pub reconciliation_symbols_per_second: Option<f64>,
    pub mean_block_latency_seconds: f64,
    pub projection: Projection,
    pub alarm: Option<String>,
    pub t_hat_series: Vec<Option<f64>>,
    pub eps_hat_series: Vec<Option<f64>>,
    pub blocks: Vec<BlockRecord>,
    pub transcript: Vec<TranscriptEntry>,
}

impl SessionReport {
    fn build(
        role: Role,
        cfg: &SessionConfig,
        blocks: Vec<BlockRecord>,
        transcript: Vec<TranscriptEntry>,
        alarm: Option<String>,
        wall_seconds: f64,
    ) -> Self {
        let n = cfg.key_symbols();
        let confirmed: Vec<&BlockRecord> =
            blocks.iter().filter(|b| b.status == BlockStatus::Confirmed).collect();
        let decode_attempts = blocks
            .iter()
            .filter(|b| {
                matches!(
                    b.status,
                    BlockStatus::Confirmed
                        | BlockStatus::DecodeFailed
                        | BlockStatus::NoKey
                        | BlockStatus::ConfirmMismatch
                )
            })
            .count();
        let decode_failures = blocks
            .iter()
            .filter(|b| b.status == BlockStatus::DecodeFailed)
            .count();
        let p_fail = if decode_attempts > 0 {
            decode_failures as f64 / decode_attempts as f64
        } else {
            0.0
        };
        let key_bits: usize = confirmed.iter().map(|b| b.key_bits).sum();
        let decode_seconds: f64 = blocks.iter().map(|b| b.decode_seconds).sum();
        let rep = cfg.operating_point.rep_rate;
        let attempted_symbols = (blocks.len() * n) as f64;
        let decoded_delta: Vec<f64> = blocks.iter().filter_map(|b| b.delta_i_eff).collect();
        let mean_delta = if decoded_delta.is_empty() {
            0.0
        } else {
            decoded_delta.iter().sum::<f64>() / decoded_delta.len() as f64
        };
        SessionReport {
            role,
            blocks_attempted: blocks.len(),
            blocks_confirmed: confirmed.len(),
            decode_attempts,
            decode_failures,
            p_fail,
            key_bits,
            disclosed_bits: blocks.iter().map(|b| b.disclosed_bits).sum(),
            symbols_per_block: n,
            wall_seconds,
            net_rate_bps: if wall_seconds > 0.0 { key_bits as f64 / wall_seconds } else { 0.0 },
            decode_seconds,
            reconciliation_symbols_per_second: (role == Role::Alice && decode_seconds > 0.0)
                .then(|| (decode_attempts * n) as f64 / decode_seconds),
            mean_block_latency_seconds: if blocks.is_empty() {
                0.0
            } else {
                blocks.iter().map(|b| b.block_seconds).sum::<f64>() / blocks.len() as f64
            },
            projection: Projection {
                rep_rate_hz: rep,
                net_rate_bps: if attempted_symbols > 0.0 {
                    rep * key_bits as f64 / attempted_symbols
                } else {
                    0.0
                },
                effective_rate_bps: rep * mean_delta.max(0.0) * (1.0 - p_fail),
            },
            alarm,
            t_hat_series: blocks.iter().map(|b| b.t_hat).collect(),
            eps_hat_series: blocks.iter().map(|b| b.eps_hat).collect(),
            blocks,
            transcript,
        }
    }
}

/// One confirmed key, `bits` one per byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockKey {
    pub block_id: u32,
    pub bits: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub keys: Vec<BlockKey>,
    pub report: SessionReport,
}

impl SessionOutcome {
    pub fn key_bits(&self) -> usize {
        self.keys.iter().map(|k| k.bits.len()).sum()
    }
}
