//! Quantum-channel hookup: each endpoint sees only its own half of a block.
//!
//! The simulation is deterministic in the shared seed, so the two halves can
//! be produced in different processes.

use std::f64::consts::TAU;

use crate::rates::{ChannelModel, DetectorModel, Modulation};
use crate::simkit::{self, AttackModel, BlockSpec, PulseRole, Quadrature, SymbolBlock};

use super::Result;

/// What Bob holds after detection.
#[derive(Debug, Clone, PartialEq)]
pub struct BobBlock {
    pub block_id: u32,
    pub quadratures: Vec<Quadrature>,
    /// Raw outcomes, in units of the nominal shot noise.
    pub outcomes: Vec<f64>,
    /// Monitored local-oscillator level.
    pub lo_level: f64,
    pub vacuum: Vec<f64>,
}

pub trait QuantumSource: Send {
    /// Alice's prepared block (values and roles).
    fn prepare(&mut self, block_id: u32) -> Result<SymbolBlock>;
    /// Bob's detection results for the same block.
    fn measure(&mut self, block_id: u32) -> Result<BobBlock>;
    /// True transmission used for the block, when known (simulation only).
    fn true_transmission(&self, _block_id: u32) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedLink {
    pub block: BlockSpec,
    pub modulation: Modulation,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
    pub attack: AttackModel,
    /// Relative amplitude of a sinusoidal transmission drift across blocks.
    pub drift: f64,
    pub drift_period: u32,
    pub lo_level: f64,
    pub vacuum_samples: usize,
}

impl SimulatedLink {
    /// Channel for `block_id`: T·(1 + drift·sin(2π·id/period)), capped at 1.
    pub fn channel_at(&self, block_id: u32) -> ChannelModel {
        let phase = TAU * block_id as f64 / self.drift_period.max(1) as f64;
        ChannelModel {
            transmission: (self.channel.transmission * (1.0 + self.drift * phase.sin())).min(1.0),
            excess_noise: self.channel.excess_noise,
        }
    }
}

impl QuantumSource for SimulatedLink {
    fn prepare(&mut self, block_id: u32) -> Result<SymbolBlock> {
        Ok(simkit::modulate_block(&self.block, block_id, &self.modulation)?)
    }

    fn measure(&mut self, block_id: u32) -> Result<BobBlock> {
        let mut sent = simkit::modulate_block(&self.block, block_id, &self.modulation)?;
        sent.lo_level = self.lo_level;
        let block = simkit::transmit_measure(
            sent,
            &self.channel_at(block_id),
            &self.detector,
            self.attack,
            self.block.seed ^ 0x5EED_0B0B,
        )?;
        let quadratures = block.quadratures()?;
        let outcomes = block
            .pulses
            .iter()
            .map(|p| p.bob_outcome.unwrap_or(f64::NAN))
            .collect();
        let vacuum = simkit::vacuum_samples(
            self.vacuum_samples,
            &self.detector,
            self.block.seed.wrapping_add(block_id as u64).rotate_left(17),
        )
        .into_iter()
        .map(|v| v * self.lo_level.sqrt())
        .collect();
        Ok(BobBlock {
            block_id,
            quadratures,
            outcomes,
            lo_level: block.lo_level,
            vacuum,
        })
    }

    fn true_transmission(&self, block_id: u32) -> Option<f64> {
        Some(self.channel_at(block_id).transmission)
    }
}

/// 2 bits per pulse, four pulses per byte, first pulse in the low bits.
pub fn pack_roles(roles: &[PulseRole]) -> Vec<u8> {
    let mut out = vec![0u8; roles.len().div_ceil(4)];
    for (i, &r) in roles.iter().enumerate() {
        out[i / 4] |= (r as u8) << (2 * (i % 4));
    }
    out
}

pub fn unpack_roles(bytes: &[u8], count: usize) -> Option<Vec<PulseRole>> {
    if bytes.len() != count.div_ceil(4) {
        return None;
    }
    (0..count)
        .map(|i| match (bytes[i / 4] >> (2 * (i % 4))) & 3 {
            0 => Some(PulseRole::Test),
            1 => Some(PulseRole::Reveal),
            2 => Some(PulseRole::Key),
            _ => None,
        })
        .collect()
}
