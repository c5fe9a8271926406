//! Statistical stand-in for the optical layer.
//!
//! Alice draws a centered bivariate Gaussian displacement for every key or
//! reveal pulse; test pulses follow a fixed pattern known to both sides. Bob
//! measures one quadrature chosen by a fair coin. The channel is simulated at
//! the level of its Gaussian input-output relation:
//!
//! ```text
//! bob = sqrt(η T) · (a + e) + z,   z ~ N(0, 1 + v_el + η T ε)
//! ```
//!
//! where `a` is Alice's value on the measured quadrature and `e` is the noise
//! injected by an intercept-resend attacker (zero when there is no attack).

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rates::{ChannelModel, DetectorModel, Modulation, RateError};

pub const BLOCK_MAGIC: [u8; 4] = *b"CVQB";
pub const BLOCK_FORMAT_VERSION: u16 = 1;
const FLAG_MEASURED: u16 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid block spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] RateError),
    #[error("pulse {0} has not been measured")]
    Unmeasured(usize),
    #[error("malformed block file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Framing of one block of pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub total_pulses: usize,
    pub test_pulses: usize,
    pub reveal_pulses: usize,
    pub seed: u64,
}

impl Default for BlockSpec {
    fn default() -> Self {
        BlockSpec {
            total_pulses: 50_000,
            test_pulses: 10_000,
            reveal_pulses: 5_000,
            seed: 0,
        }
    }
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.test_pulses + self.reveal_pulses >= self.total_pulses {
            return Err(SimError::InvalidSpec(format!(
                "test ({}) + reveal ({}) must be below total ({})",
                self.test_pulses, self.reveal_pulses, self.total_pulses
            )));
        }
        if self.total_pulses > u32::MAX as usize {
            return Err(SimError::InvalidSpec("block too large".into()));
        }
        Ok(())
    }

    pub fn key_pulses(&self) -> usize {
        self.total_pulses - self.test_pulses - self.reveal_pulses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum PulseRole {
    Test = 0,
    Reveal = 1,
    Key = 2,
}

impl PulseRole {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(PulseRole::Test),
            1 => Some(PulseRole::Reveal),
            2 => Some(PulseRole::Key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum Quadrature {
    X = 0,
    P = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub alice_x: f64,
    pub alice_p: f64,
    pub role: PulseRole,
    pub quadrature: Option<Quadrature>,
    pub bob_outcome: Option<f64>,
}

impl Pulse {
    /// Alice's displacement on quadrature `q`.
    pub fn alice_on(&self, q: Quadrature) -> f64 {
        match q {
            Quadrature::X => self.alice_x,
            Quadrature::P => self.alice_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolBlock {
    pub block_id: u32,
    pub modulation_variance: f64,
    /// Local-oscillator level relative to nominal, as monitored at Bob's side.
    pub lo_level: f64,
    pub pulses: Vec<Pulse>,
}

impl SymbolBlock {
    pub fn is_measured(&self) -> bool {
        self.pulses.iter().all(|p| p.bob_outcome.is_some())
    }

    pub fn count(&self, role: PulseRole) -> usize {
        self.pulses.iter().filter(|p| p.role == role).count()
    }

    /// Bob's quadrature choices, in pulse order.
    pub fn quadratures(&self) -> Result<Vec<Quadrature>> {
        self.pulses
            .iter()
            .enumerate()
            .map(|(i, p)| p.quadrature.ok_or(SimError::Unmeasured(i)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AttackModel {
    #[default]
    None,
    /// Eve heterodynes every pulse and re-prepares a coherent state, adding
    /// two shot-noise units at the channel input.
    InterceptResend,
}

/// Excess noise added at the channel input by an intercept-resend attack.
pub const INTERCEPT_RESEND_NOISE: f64 = 2.0;

/// Amplitude/phase of the `i`-th test pulse: constant amplitude `sqrt(V_A)`,
/// phase alternating between 0 and π/2.
pub fn test_pulse_pattern(i: usize, modulation_variance: f64) -> (f64, f64) {
    let amp = modulation_variance.sqrt();
    if i % 2 == 0 {
        (amp, 0.0)
    } else {
        (0.0, amp)
    }
}

fn block_rng(seed: u64, block_id: u32, purpose: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | block_id as u64);
    rng
}

/// Assigns roles: test pulses at evenly spaced positions, reveal pulses a
/// uniformly random subset of the rest.
fn assign_roles(spec: &BlockSpec, rng: &mut ChaCha12Rng) -> Vec<PulseRole> {
    let n = spec.total_pulses;
    let mut roles = vec![PulseRole::Key; n];
    for i in 0..spec.test_pulses {
        roles[i * n / spec.test_pulses] = PulseRole::Test;
    }
    let mut candidates: Vec<usize> = (0..n).filter(|&i| roles[i] != PulseRole::Test).collect();
    // partial Fisher-Yates
    for k in 0..spec.reveal_pulses {
        let j = rng.random_range(k..candidates.len());
        candidates.swap(k, j);
        roles[candidates[k]] = PulseRole::Reveal;
    }
    roles
}

/// Alice's half of a block. Deterministic in `(spec.seed, block_id)`.
pub fn modulate_block(spec: &BlockSpec, block_id: u32, modulation: &Modulation) -> Result<SymbolBlock> {
    spec.validate()?;
    modulation.validate()?;
    let mut rng = block_rng(spec.seed, block_id, 1);
    let roles = assign_roles(spec, &mut rng);
    let sigma = modulation.variance.sqrt();
    let mut test_index = 0;
    let pulses = roles
        .into_iter()
        .map(|role| {
            let (alice_x, alice_p) = match role {
                PulseRole::Test => {
                    let v = test_pulse_pattern(test_index, modulation.variance);
                    test_index += 1;
                    v
                }
                _ => {
                    let x: f64 = rng.sample(StandardNormal);
                    let p: f64 = rng.sample(StandardNormal);
                    (sigma * x, sigma * p)
                }
            };
            Pulse {
                alice_x,
                alice_p,
                role,
                quadrature: None,
                bob_outcome: None,
            }
        })
        .collect();
    Ok(SymbolBlock {
        block_id,
        modulation_variance: modulation.variance,
        lo_level: 1.0,
        pulses,
    })
}

/// Sends Alice's pulses through the channel and performs Bob's homodyne
/// detection. Outcomes are expressed in units of the nominal shot noise, so a
/// local-oscillator level away from 1 rescales them by `sqrt(lo_level)`.
pub fn transmit_measure(
    mut block: SymbolBlock,
    ch: &ChannelModel,
    det: &DetectorModel,
    attack: AttackModel,
    seed: u64,
) -> Result<SymbolBlock> {
    ch.validate()?;
    det.validate()?;
    let mut rng = block_rng(seed, block.block_id, 2);
    let gain = (det.efficiency * ch.transmission).sqrt();
    let noise_sd = (1.0 + det.electronic_noise + det.efficiency * ch.transmission * ch.excess_noise).sqrt();
    let eve_sd = match attack {
        AttackModel::None => 0.0,
        AttackModel::InterceptResend => INTERCEPT_RESEND_NOISE.sqrt(),
    };
    let lo_scale = block.lo_level.sqrt();
    for pulse in &mut block.pulses {
        let q = if rng.random::<bool>() {
            Quadrature::P
        } else {
            Quadrature::X
        };
        let a = pulse.alice_on(q);
        let e: f64 = if eve_sd > 0.0 {
            eve_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let z: f64 = noise_sd * rng.sample::<f64, _>(StandardNormal);
        pulse.quadrature = Some(q);
        pulse.bob_outcome = Some(lo_scale * (gain * (a + e) + z));
    }
    Ok(block)
}

/// Vacuum measurements used for shot-noise calibration: `N(0, 1 + v_el)`.
pub fn vacuum_samples(count: usize, det: &DetectorModel, seed: u64) -> Vec<f64> {
    let mut rng = block_rng(seed, 0, 3);
    let sd = (1.0 + det.electronic_noise).sqrt();
    (0..count)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftedPair {
    pub pulse_index: u32,
    pub alice: f64,
    pub bob: f64,
    pub revealed: bool,
}

/// Keeps key and reveal pulses, pairing Bob's outcome with Alice's value on
/// the quadrature he measured.
pub fn sift(block: &SymbolBlock) -> Result<Vec<SiftedPair>> {
    let mut out = Vec::with_capacity(block.pulses.len());
    for (i, p) in block.pulses.iter().enumerate() {
        if p.role == PulseRole::Test {
            continue;
        }
        let (Some(q), Some(bob)) = (p.quadrature, p.bob_outcome) else {
            return Err(SimError::Unmeasured(i));
        };
        out.push(SiftedPair {
            pulse_index: i as u32,
            alice: p.alice_on(q),
            bob,
            revealed: p.role == PulseRole::Reveal,
        });
    }
    Ok(out)
}

/// Writes one block in the `CVQB` replay format.
///
/// Layout (all little-endian): a 16-byte header `"CVQB" | version u16 |
/// flags u16 | pulse count u32 | block id u32`, the modulation variance and
/// LO level as `f64`, then one 26-byte record per pulse:
/// `alice_x f64 | alice_p f64 | bob f64 | quadrature u8 | role u8`.
/// Unmeasured pulses store a NaN outcome and quadrature tag 255.
pub fn write_block<W: Write>(w: &mut W, block: &SymbolBlock) -> Result<()> {
    let measured = block.is_measured();
    let mut buf = Vec::with_capacity(32 + 26 * block.pulses.len());
    buf.extend_from_slice(&BLOCK_MAGIC);
    buf.extend_from_slice(&BLOCK_FORMAT_VERSION.to_le_bytes());
    let flags = if measured { FLAG_MEASURED } else { 0 };
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(block.pulses.len() as u32).to_le_bytes());
    buf.extend_from_slice(&block.block_id.to_le_bytes());
    buf.extend_from_slice(&block.modulation_variance.to_le_bytes());
    buf.extend_from_slice(&block.lo_level.to_le_bytes());
    for p in &block.pulses {
        buf.extend_from_slice(&p.alice_x.to_le_bytes());
        buf.extend_from_slice(&p.alice_p.to_le_bytes());
        buf.extend_from_slice(&p.bob_outcome.unwrap_or(f64::NAN).to_le_bytes());
        buf.push(p.quadrature.map_or(255, |q| q as u8));
        buf.push(p.role as u8);
    }
    w.write_all(&buf)?;
    Ok(())
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Reads one block; `Ok(None)` on a clean end of stream.
pub fn read_block<R: Read>(r: &mut R) -> Result<Option<SymbolBlock>> {
    let mut header = [0u8; 16];
    let mut filled = 0;
    while filled < header.len() {
        let got = r.read(&mut header[filled..])?;
        if got == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(SimError::Format("truncated header".into()));
        }
        filled += got;
    }
    if header[..4] != BLOCK_MAGIC {
        return Err(SimError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != BLOCK_FORMAT_VERSION {
        return Err(SimError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let block_id = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let mut params = [0u8; 16];
    r.read_exact(&mut params)?;
    let mut body = vec![0u8; count * 26];
    r.read_exact(&mut body)?;
    let pulses = body
        .chunks_exact(26)
        .map(|rec| {
            let quadrature = match rec[24] {
                0 => Some(Quadrature::X),
                1 => Some(Quadrature::P),
                255 => None,
                t => return Err(SimError::Format(format!("bad quadrature tag {t}"))),
            };
            let role = PulseRole::from_tag(rec[25])
                .ok_or_else(|| SimError::Format(format!("bad role tag {}", rec[25])))?;
            let bob = f64_at(rec, 16);
            Ok(Pulse {
                alice_x: f64_at(rec, 0),
                alice_p: f64_at(rec, 8),
                role,
                quadrature,
                bob_outcome: quadrature.map(|_| bob),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(SymbolBlock {
        block_id,
        modulation_variance: f64_at(&params, 0),
        lo_level: f64_at(&params, 8),
        pulses,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::OperatingPoint;

    fn big_spec(key: usize) -> BlockSpec {
        BlockSpec {
            total_pulses: key + 2,
            test_pulses: 1,
            reveal_pulses: 0,
            seed: 7,
        }
    }

    fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn spec_validation_and_partition() {
        assert!(BlockSpec {
            total_pulses: 10,
            test_pulses: 5,
            reveal_pulses: 5,
            seed: 0
        }
        .validate()
        .is_err());
        let spec = BlockSpec::default();
        assert_eq!(spec.key_pulses(), 35_000);
        let block = modulate_block(&spec, 3, &Modulation { variance: 18.5 }).unwrap();
        assert_eq!(block.count(PulseRole::Test), 10_000);
        assert_eq!(block.count(PulseRole::Reveal), 5_000);
        assert_eq!(block.count(PulseRole::Key), 35_000);
    }

    #[test]
    fn test_pulses_follow_pattern() {
        let spec = BlockSpec::default();
        let block = modulate_block(&spec, 0, &Modulation { variance: 18.5 }).unwrap();
        let amp = 18.5f64.sqrt();
        for (i, p) in block
            .pulses
            .iter()
            .filter(|p| p.role == PulseRole::Test)
            .enumerate()
        {
            let expect = if i % 2 == 0 { (amp, 0.0) } else { (0.0, amp) };
            assert_eq!((p.alice_x, p.alice_p), expect);
        }
    }

    #[test]
    fn modulation_variance_matches() {
        let block = modulate_block(&big_spec(1_000_000), 0, &Modulation { variance: 18.5 }).unwrap();
        let xs = block
            .pulses
            .iter()
            .filter(|p| p.role == PulseRole::Key)
            .map(|p| p.alice_x);
        let (_, var) = mean_var(xs);
        assert!((18.3..=18.7).contains(&var), "{var}");
    }

    #[test]
    fn zero_modulation_is_all_zero() {
        let block = modulate_block(&BlockSpec::default(), 0, &Modulation { variance: 0.0 }).unwrap();
        assert!(block
            .pulses
            .iter()
            .all(|p| p.alice_x == 0.0 && p.alice_p == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let op = OperatingPoint::link_25km();
        let make = || {
            let b = modulate_block(&BlockSpec::default(), 9, &op.modulation).unwrap();
            transmit_measure(b, &op.channel, &op.detector, AttackModel::None, 11).unwrap()
        };
        assert_eq!(make(), make());
        let other = modulate_block(&BlockSpec::default(), 10, &op.modulation).unwrap();
        let key = |b: &SymbolBlock| b.pulses.iter().find(|p| p.role == PulseRole::Key).unwrap().alice_x;
        assert_ne!(key(&make()), key(&other));
    }

    #[test]
    fn bob_variance_and_covariance() {
        let op = OperatingPoint::link_25km();
        let block = modulate_block(&big_spec(1_000_000), 1, &op.modulation).unwrap();
        let block = transmit_measure(block, &op.channel, &op.detector, AttackModel::None, 5).unwrap();
        let pairs = sift(&block).unwrap();
        let (_, var_b) = mean_var(pairs.iter().map(|p| p.bob));
        let eta_t: f64 = 0.606 * 0.302;
        let expect = eta_t * 18.5 + eta_t * 0.005 + 1.041;
        assert_close!(var_b, expect, 0.03);
        assert_close!(var_b, 4.427, 0.03);
        let n = pairs.len() as f64;
        let cov = pairs.iter().map(|p| p.alice * p.bob).sum::<f64>() / n;
        assert_close!(cov, eta_t.sqrt() * 18.5, 0.1);
        assert_close!(cov, 7.91, 0.1);
    }

    #[test]
    fn pure_shot_noise() {
        let block = modulate_block(&big_spec(1_000_000), 2, &Modulation { variance: 0.0 }).unwrap();
        let block = transmit_measure(
            block,
            &ChannelModel::ideal(),
            &DetectorModel::ideal(),
            AttackModel::None,
            1,
        )
        .unwrap();
        let (_, var) = mean_var(block.pulses.iter().map(|p| p.bob_outcome.unwrap()));
        assert_close!(var, 1.0, 0.005);
    }

    #[test]
    fn sift_keeps_measured_quadrature() {
        let op = OperatingPoint::link_25km();
        let spec = BlockSpec {
            total_pulses: 2000,
            test_pulses: 100,
            reveal_pulses: 100,
            seed: 1,
        };
        let block = modulate_block(&spec, 0, &op.modulation).unwrap();
        assert!(matches!(sift(&block), Err(SimError::Unmeasured(_))));
        let mut block = transmit_measure(block, &op.channel, &op.detector, AttackModel::None, 2).unwrap();
        for p in &mut block.pulses {
            p.quadrature = Some(Quadrature::X);
        }
        let pairs = sift(&block).unwrap();
        assert_eq!(pairs.len(), spec.key_pulses() + spec.reveal_pulses);
        assert_eq!(pairs.iter().filter(|p| p.revealed).count(), 100);
        for pair in &pairs {
            assert_eq!(pair.alice, block.pulses[pair.pulse_index as usize].alice_x);
        }
        let empty = SymbolBlock {
            block_id: 0,
            modulation_variance: 1.0,
            lo_level: 1.0,
            pulses: vec![],
        };
        assert!(sift(&empty).unwrap().is_empty());
    }

    #[test]
    fn block_file_roundtrip() {
        let op = OperatingPoint::link_25km();
        let spec = BlockSpec {
            total_pulses: 500,
            test_pulses: 50,
            reveal_pulses: 50,
            seed: 3,
        };
        let alice = modulate_block(&spec, 4, &op.modulation).unwrap();
        let measured = transmit_measure(alice.clone(), &op.channel, &op.detector, AttackModel::None, 3).unwrap();
        let mut buf = Vec::new();
        write_block(&mut buf, &alice).unwrap();
        write_block(&mut buf, &measured).unwrap();
        assert_eq!(&buf[..4], b"CVQB");
        assert_eq!(buf.len(), 2 * (32 + 26 * 500));
        let mut r = &buf[..];
        assert_eq!(read_block(&mut r).unwrap().unwrap(), alice);
        assert_eq!(read_block(&mut r).unwrap().unwrap(), measured);
        assert!(read_block(&mut r).unwrap().is_none());
        buf[0] = b'X';
        assert!(read_block(&mut &buf[..]).is_err());
    }
}
