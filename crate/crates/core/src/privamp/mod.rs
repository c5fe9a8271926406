//! Privacy amplification by composite hashing.
//!
//! Stage 1 is a fast, almost-universal NTT hash over GF(p) that compresses
//! the reconciled block to `m` bits; stage 2 multiplies by a random element
//! of GF(2^m) and truncates to the key length, which is universal. The
//! composite family has universality `ε_c = 2^(k−m)·ε₁ + 1`.
//!
//! ```
//! use cvqkd::privamp::KeyBudget;
//! let budget = KeyBudget::new(200_000, 0.0434, 100);
//! assert_eq!(budget.key_bits(), Some(8_580));
//! ```

mod gf2x;
mod ntt;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gf2x::TrinomialField;
pub use ntt::{cyclic_convolution, is_prime, pow_mod, Ntt};

#[derive(Debug, Error)]
pub enum PrivampError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("startup verification failed: {0}")]
    Verification(String),
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("hash seed contains a zero element")]
    ZeroSeed,
    #[error("no key available (budget {available} bits)")]
    NoKey { available: i64 },
    #[error("malformed seed encoding: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PrivampError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSpec {
    pub prime: u64,
    pub ntt_len: usize,
    pub bits_per_element: usize,
    /// Intermediate size, also the degree of the stage-2 field.
    pub m: usize,
    /// Middle exponent of the reduction trinomial x^m + x^a + 1.
    pub trinomial_middle: usize,
}

impl HashSpec {
    pub const fn standard() -> Self {
        HashSpec {
            prime: 33_832_961,
            ntt_len: 1 << 14,
            bits_per_element: 25,
            m: 19_937,
            trinomial_middle: 881,
        }
    }

    /// Largest input block the stage-1 packing accepts.
    pub fn max_input_bits(&self) -> usize {
        self.ntt_len * self.bits_per_element
    }

    /// Short identifier exchanged in the session handshake.
    pub fn id(&self) -> String {
        format!(
            "ntt{}-{}x{}/gf2^{}+{}",
            self.prime, self.ntt_len, self.bits_per_element, self.m, self.trinomial_middle
        )
    }
}

impl Default for HashSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Verified hashing machinery for one `HashSpec`.
#[derive(Debug, Clone)]
pub struct Hasher {
    spec: HashSpec,
    ntt: Ntt,
    field: TrinomialField,
}

impl Hasher {
    /// Fails fast if p is not prime, the NTT root has the wrong order or the
    /// trinomial is reducible.
    pub fn new(spec: HashSpec) -> Result<Self> {
        if spec.bits_per_element == 0 || (1u64 << spec.bits_per_element) > spec.prime {
            return Err(PrivampError::InvalidParameter(format!(
                "{} bits per element do not fit below p = {}",
                spec.bits_per_element, spec.prime
            )));
        }
        if spec.max_input_bits() < spec.m {
            return Err(PrivampError::InvalidParameter(
                "stage-1 output shorter than the intermediate size".into(),
            ));
        }
        let ntt = Ntt::new(spec.prime, spec.ntt_len)?;
        let field = TrinomialField::new(spec.m, spec.trinomial_middle)?;
        field.verify_irreducible()?;
        Ok(Hasher { spec, ntt, field })
    }

    pub fn spec(&self) -> &HashSpec {
        &self.spec
    }

    pub fn ntt(&self) -> &Ntt {
        &self.ntt
    }

    pub fn field(&self) -> &TrinomialField {
        &self.field
    }

    /// Packs the bits into elements (little-endian within each element,
    /// zero padded), multiplies by the seed vector, inverse-transforms and
    /// re-serializes the low `bits_per_element` bits of every element,
    /// truncated to `out_bits`.
    pub fn stage1(&self, input: &[u8], seed: &[u64], out_bits: usize) -> Result<Vec<u8>> {
        let (len, bpe, p) = (self.spec.ntt_len, self.spec.bits_per_element, self.spec.prime);
        if input.len() > self.spec.max_input_bits() {
            return Err(PrivampError::SizeMismatch {
                expected: self.spec.max_input_bits(),
                got: input.len(),
            });
        }
        if out_bits > len * bpe {
            return Err(PrivampError::InvalidParameter(format!("{out_bits} output bits")));
        }
        if seed.len() != len {
            return Err(PrivampError::SizeMismatch {
                expected: len,
                got: seed.len(),
            });
        }
        if seed.iter().any(|&s| s == 0) {
            return Err(PrivampError::ZeroSeed);
        }
        let mut v = vec![0u64; len];
        for (i, &b) in input.iter().enumerate() {
            v[i / bpe] |= ((b & 1) as u64) << (i % bpe);
        }
        for (x, &s) in v.iter_mut().zip(seed) {
            if s >= p {
                return Err(PrivampError::InvalidParameter(format!("seed element {s} ≥ p")));
            }
            *x = *x * s % p;
        }
        self.ntt.inverse(&mut v)?;
        Ok((0..out_bits)
            .map(|i| ((v[i / bpe] >> (i % bpe)) & 1) as u8)
            .collect())
    }

    /// Multiplies the m-bit input by the seed in GF(2^m) and keeps the
    /// first `k` bits.
    pub fn stage2(&self, input: &[u8], seed: &[u64], k: usize) -> Result<Vec<u8>> {
        if k > self.spec.m {
            return Err(PrivampError::InvalidParameter(format!("k = {k} exceeds m")));
        }
        if seed.len() != self.field.words() {
            return Err(PrivampError::SizeMismatch {
                expected: self.field.words(),
                got: seed.len(),
            });
        }
        if seed.iter().all(|&w| w == 0) {
            return Err(PrivampError::ZeroSeed);
        }
        let x = self.field.from_bits(input)?;
        let y = self.field.mul(&x, seed);
        Ok(self.field.to_bits(&y, k))
    }
}

/// Public randomness selecting one function of the composite family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashSeed {
    pub stage1: Vec<u64>,
    pub stage2: Vec<u64>,
}

impl HashSeed {
    pub fn generate<R: Rng + ?Sized>(spec: &HashSpec, rng: &mut R) -> Self {
        let stage1 = (0..spec.ntt_len)
            .map(|_| rng.random_range(1..spec.prime))
            .collect();
        let words = spec.m.div_ceil(64);
        let top_mask = match spec.m % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        };
        let stage2 = loop {
            let mut w: Vec<u64> = (0..words).map(|_| rng.random()).collect();
            w[words - 1] &= top_mask;
            if w.iter().any(|&x| x != 0) {
                break w;
            }
        };
        HashSeed { stage1, stage2 }
    }

    /// u32 little-endian stage-1 elements followed by u64 little-endian
    /// stage-2 words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.stage1.len() + 8 * self.stage2.len());
        for &e in &self.stage1 {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &w in &self.stage2 {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(spec: &HashSpec, bytes: &[u8]) -> Result<Self> {
        let words = spec.m.div_ceil(64);
        let expected = 4 * spec.ntt_len + 8 * words;
        if bytes.len() != expected {
            return Err(PrivampError::SizeMismatch {
                expected,
                got: bytes.len(),
            });
        }
        let (a, b) = bytes.split_at(4 * spec.ntt_len);
        let stage1: Vec<u64> = a
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
            .collect();
        let stage2: Vec<u64> = b
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if stage1.iter().any(|&e| e >= spec.prime) {
            return Err(PrivampError::Format("stage-1 element out of range".into()));
        }
        if stage1.contains(&0) || stage2.iter().all(|&w| w == 0) {
            return Err(PrivampError::ZeroSeed);
        }
        Ok(HashSeed { stage1, stage2 })
    }
}

/// Key-length accounting: k = ⌊n·ΔI_eff⌋ − s − leak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyBudget {
    pub symbols: usize,
    pub delta_i_eff: f64,
    pub security_bits: usize,
    /// Further public leakage to subtract, e.g. a key-confirmation digest.
    pub leak_bits: usize,
}

impl KeyBudget {
    pub fn new(symbols: usize, delta_i_eff: f64, security_bits: usize) -> Self {
        KeyBudget {
            symbols,
            delta_i_eff,
            security_bits,
            leak_bits: 0,
        }
    }

    pub fn with_leak(mut self, bits: usize) -> Self {
        self.leak_bits = bits;
        self
    }

    /// Signed budget before clamping; useful for reporting.
    pub fn raw_bits(&self) -> i64 {
        let gross = if self.delta_i_eff.is_finite() {
            (self.symbols as f64 * self.delta_i_eff).floor() as i64
        } else {
            0
        };
        gross - self.security_bits as i64 - self.leak_bits as i64
    }

    pub fn key_bits(&self) -> Option<usize> {
        let k = self.raw_bits();
        (k >= 1).then_some(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaReport {
    pub input_bits: usize,
    pub key_bits: usize,
    pub security_bits: usize,
    pub leak_bits: usize,
    /// Stage-1 universality 1 + k/p.
    pub epsilon1: f64,
    /// Composite universality 2^(k−m)·ε₁ + 1 (evaluates to 1 in f64 for
    /// every practical k).
    pub composite_epsilon: f64,
    /// log2(ε_c − 1) = k − m + log2(ε₁), finite where ε_c − 1 underflows.
    pub composite_excess_log2: f64,
}

pub fn composite_universality(k: usize, spec: &HashSpec) -> (f64, f64, f64) {
    let eps1 = 1.0 + k as f64 / spec.prime as f64;
    let excess_log2 = k as f64 - spec.m as f64 + eps1.log2();
    let eps_c = 2f64.powf(k as f64 - spec.m as f64) * eps1 + 1.0;
    (eps1, eps_c, excess_log2)
}

/// Composite hash of `block` truncated to `k` bits, for a peer that was
/// told the key length rather than computing it.
pub fn hash_to_length(hasher: &Hasher, block: &[u8], k: usize, seed: &HashSeed) -> Result<Vec<u8>> {
    let mid = hasher.stage1(block, &seed.stage1, hasher.spec().m)?;
    hasher.stage2(&mid, &seed.stage2, k)
}

/// Hashes one reconciled block into a key of `budget.key_bits()` bits.
pub fn privacy_amplify(
    hasher: &Hasher,
    block: &[u8],
    budget: &KeyBudget,
    seed: &HashSeed,
) -> Result<(Vec<u8>, PaReport)> {
    let spec = hasher.spec();
    let k = budget.key_bits().ok_or(PrivampError::NoKey {
        available: budget.raw_bits(),
    })?;
    if k > spec.m {
        return Err(PrivampError::InvalidParameter(format!(
            "key length {k} exceeds intermediate size {}",
            spec.m
        )));
    }
    let key = hash_to_length(hasher, block, k, seed)?;
    let (epsilon1, composite_epsilon, composite_excess_log2) = composite_universality(k, spec);
    Ok((
        key,
        PaReport {
            input_bits: block.len(),
            key_bits: k,
            security_bits: budget.security_bits,
            leak_bits: budget.leak_bits,
            epsilon1,
            composite_epsilon,
            composite_excess_log2,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub block_id: u32,
    pub k: usize,
    pub s: usize,
    pub eps_c: f64,
    pub started: f64,
    pub finished: f64,
}

pub fn unix_time() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Appends keys to a binary file and one JSON line per key to a sidecar.
/// Each key is packed little-endian within bytes and padded to a byte
/// boundary; the sidecar's `k` gives its exact length.
pub struct KeyWriter {
    keys: BufWriter<File>,
    sidecar: BufWriter<File>,
}

impl KeyWriter {
    pub fn create(key_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let open = |p: &Path| OpenOptions::new().create(true).write(true).truncate(true).open(p);
        Ok(KeyWriter {
            keys: BufWriter::new(open(key_path)?),
            sidecar: BufWriter::new(open(sidecar_path)?),
        })
    }

    pub fn append(&mut self, key: &[u8], record: &KeyRecord) -> Result<()> {
        let mut bytes = vec![0u8; key.len().div_ceil(8)];
        for (i, &b) in key.iter().enumerate() {
            bytes[i / 8] |= (b & 1) << (i % 8);
        }
        self.keys.write_all(&bytes)?;
        let line = serde_json::to_string(record).map_err(|e| PrivampError::Format(e.to_string()))?;
        writeln!(self.sidecar, "{line}")?;
        // Flush both so an interruption never leaves a key without its record.
        self.keys.flush()?;
        self.sidecar.flush()?;
        Ok(())
    }
}
