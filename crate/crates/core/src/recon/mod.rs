//! Multilevel reverse reconciliation.
//!
//! Bob quantizes his Gaussian outcomes into 16 intervals and splits each
//! 4-bit label into bit-planes. Low-information planes are disclosed
//! outright; the others are protected by LDPC syndromes, and the union of
//! undisclosed planes by a shortened BCH code. Alice decodes the planes from
//! her own Gaussian values, passing soft information between levels.

mod bch;
mod decoder;
mod gf2m;
mod ldpc;
mod multilevel;
mod quantizer;

pub use bch::{BchCode, BchOutcome};
pub use decoder::{DecodeOutcome, DecoderState, SumProduct, LLR_MAX, LLR_SCALE};
pub use gf2m::Gf2m;
pub use ldpc::{AuditReport, DegreeProfile, LdpcCode};
pub use multilevel::{
    decode_multilevel, efficiency_beta, encode_syndromes, nominal_disclosed_bits, quantize,
    secret_planes, DecodeReport, LevelPayload, MultilevelCodes, MultilevelSpec, SyndromeSet,
};

pub use quantizer::{
    design_quantizer, level_profiles, GaussianLink, LevelProfiles, QuantizerConfig, QuantizerDesign, WidthRule,
    NUM_INTERVALS, NUM_LEVELS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("numerical integration did not converge (difference {0:e})")]
    Integration(f64),
    #[error("cannot construct code: {0}")]
    Construction(String),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("efficiency {beta} outside [0, {bound}]")]
    EfficiencyOutOfRange { beta: f64, bound: f64 },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for ReconError {
    fn from(e: std::io::Error) -> Self {
        ReconError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ReconError>;

/// Packs bits (one per byte, 0/1) little-endian within bytes.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Vec<u8> {
    (0..count).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}
