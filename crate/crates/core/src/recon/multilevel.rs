//! Multilevel encoding (Bob) and multistage soft decoding (Alice).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::bch::{BchCode, BchOutcome};
use super::decoder::{DecoderState, SumProduct, LLR_MAX, LLR_SCALE};
use super::ldpc::LdpcCode;
use super::quantizer::{GaussianLink, LevelProfiles, QuantizerConfig, NUM_INTERVALS, NUM_LEVELS};
use super::{pack_bits, unpack_bits, ReconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultilevelSpec {
    /// Code rate per level, LSB first; 0 discloses the whole plane.
    pub rates: [f64; NUM_LEVELS],
    pub block_len: usize,
    pub outer_rate: f64,
    /// Inter-level sweeps (each visits every undecided level once).
    pub max_sweeps: usize,
    /// Inner iterations per level per sweep.
    pub iterations_per_sweep: usize,
    /// Total inner-iteration budget per level.
    pub max_iterations: usize,
    pub code_seed: u64,
}

impl MultilevelSpec {
    /// Full-length configuration: 200 000-symbol blocks at the nominal rates.
    pub fn full_length() -> Self {
        MultilevelSpec {
            rates: [0.0, 0.0, 0.42, 0.95],
            block_len: 200_000,
            outer_rate: 0.998,
            max_sweeps: 5,
            iterations_per_sweep: 40,
            max_iterations: 200,
            code_seed: 1,
        }
    }

    /// Same rates at a length that decodes in milliseconds.
    pub fn desk() -> Self {
        MultilevelSpec {
            block_len: 10_000,
            ..Self::full_length()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for &r in &self.rates {
            if !(0.0..1.0).contains(&r) {
                return Err(ReconError::InvalidParameter(format!("level rate {r}")));
            }
        }
        if !(self.outer_rate > 0.0 && self.outer_rate <= 1.0) {
            return Err(ReconError::InvalidParameter(format!(
                "outer rate {}",
                self.outer_rate
            )));
        }
        if self.max_sweeps == 0 || self.max_iterations == 0 || self.iterations_per_sweep == 0 {
            return Err(ReconError::InvalidParameter("zero iteration budget".into()));
        }
        Ok(())
    }

    pub fn is_disclosed(&self, level: usize) -> bool {
        self.rates[level] == 0.0
    }

    pub fn coded_levels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_LEVELS).filter(|&j| !self.is_disclosed(j))
    }

    /// Bits covered by the outer code: every undisclosed plane.
    pub fn outer_payload_len(&self) -> usize {
        self.coded_levels().count() * self.block_len
    }

    pub fn outer_parity_budget(&self) -> usize {
        let raw = (1.0 - self.outer_rate) * self.outer_payload_len() as f64;
        (raw - 1e-6).ceil().max(0.0) as usize
    }

    pub fn level_seed(&self, level: usize) -> u64 {
        self.code_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(level as u64)
    }
}

/// LDPC codes per coded level plus the outer BCH code.
#[derive(Debug, Clone)]
pub struct MultilevelCodes {
    pub spec: MultilevelSpec,
    pub ldpc: [Option<Arc<LdpcCode>>; NUM_LEVELS],
    pub outer: Option<BchCode>,
}

impl MultilevelCodes {
    /// Process-wide cache: both endpoints of an in-process session (and
    /// repeated sessions) share one construction per spec.
    pub fn shared(spec: MultilevelSpec) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<String, Arc<MultilevelCodes>>>> = OnceLock::new();
        let key = format!("{spec:?}");
        let mut cache = CACHE
            .get_or_init(Default::default)
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        if let Some(codes) = cache.get(&key) {
            return Ok(codes.clone());
        }
        let codes = Arc::new(Self::build(spec)?);
        cache.insert(key, codes.clone());
        Ok(codes)
    }

    pub fn build(spec: MultilevelSpec) -> Result<Self> {
        spec.validate()?;
        let mut ldpc: [Option<Arc<LdpcCode>>; NUM_LEVELS] = Default::default();
        for j in spec.coded_levels() {
            ldpc[j] = Some(Arc::new(LdpcCode::build(
                spec.block_len,
                spec.rates[j],
                spec.level_seed(j),
            )?));
        }
        Self::from_parts(spec, ldpc)
    }

    /// Uses prebuilt LDPC codes (e.g. loaded from files).
    pub fn from_parts(spec: MultilevelSpec, ldpc: [Option<Arc<LdpcCode>>; NUM_LEVELS]) -> Result<Self> {
        spec.validate()?;
        for j in 0..NUM_LEVELS {
            match (&ldpc[j], spec.is_disclosed(j)) {
                (None, true) => {}
                (Some(c), false) if c.n() == spec.block_len => {}
                _ => {
                    return Err(ReconError::InvalidParameter(format!(
                        "level {j}: code does not match spec"
                    )))
                }
            }
        }
        let budget = spec.outer_parity_budget();
        let outer = if spec.outer_payload_len() > 0 && budget > 0 {
            Some(BchCode::for_payload(spec.outer_payload_len(), budget)?)
        } else {
            None
        };
        Ok(MultilevelCodes { spec, ldpc, outer })
    }

    pub fn outer_parity_len(&self) -> usize {
        self.outer.as_ref().map_or(0, |b| b.parity_len())
    }

    /// M_rec: every bit Bob publishes for one frame.
    pub fn disclosed_bits(&self) -> usize {
        let n = self.spec.block_len;
        let planes: usize = (0..NUM_LEVELS)
            .map(|j| self.ldpc[j].as_ref().map_or(n, |c| c.m()))
            .sum();
        planes + self.outer_parity_len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LevelPayload {
    Disclosed(Vec<u8>),
    Syndrome { code_seed: u64, bits: Vec<u8> },
}

impl LevelPayload {
    pub fn len(&self) -> usize {
        match self {
            LevelPayload::Disclosed(b) | LevelPayload::Syndrome { bits: b, .. } => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything Bob sends for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyndromeSet {
    pub block_id: u32,
    pub levels: Vec<LevelPayload>,
    pub outer_parity: Vec<u8>,
}

impl SyndromeSet {
    pub fn disclosed_bits(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum::<usize>() + self.outer_parity.len()
    }

    /// Level-ordered, LSB plane first; bits packed little-endian in bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.block_id.to_be_bytes());
        out.push(self.levels.len() as u8);
        for level in &self.levels {
            let (kind, seed, bits) = match level {
                LevelPayload::Disclosed(b) => (0u8, 0u64, b),
                LevelPayload::Syndrome { code_seed, bits } => (1u8, *code_seed, bits),
            };
            out.push(kind);
            out.extend_from_slice(&seed.to_be_bytes());
            out.extend_from_slice(&(bits.len() as u32).to_be_bytes());
            out.extend_from_slice(&pack_bits(bits));
        }
        out.extend_from_slice(&(self.outer_parity.len() as u32).to_be_bytes());
        out.extend_from_slice(&pack_bits(&self.outer_parity));
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = data
                .get(pos..pos + n)
                .ok_or_else(|| ReconError::Format("truncated syndrome payload".into()))?;
            pos += n;
            Ok(s)
        };
        let block_id = u32::from_be_bytes(take(4)?.try_into().unwrap_or_default());
        let count = take(1)?[0] as usize;
        let mut levels = Vec::with_capacity(count);
        for _ in 0..count {
            let kind = take(1)?[0];
            let seed = u64::from_be_bytes(take(8)?.try_into().unwrap_or_default());
            let len = u32::from_be_bytes(take(4)?.try_into().unwrap_or_default()) as usize;
            let bits = unpack_bits(take(len.div_ceil(8))?, len);
            levels.push(match kind {
                0 => LevelPayload::Disclosed(bits),
                1 => LevelPayload::Syndrome {
                    code_seed: seed,
                    bits,
                },
                k => return Err(ReconError::Format(format!("unknown level kind {k}"))),
            });
        }
        let len = u32::from_be_bytes(take(4)?.try_into().unwrap_or_default()) as usize;
        let outer_parity = unpack_bits(take(len.div_ceil(8))?, len);
        if pos != data.len() {
            return Err(ReconError::Format("trailing bytes after syndromes".into()));
        }
        Ok(SyndromeSet {
            block_id,
            levels,
            outer_parity,
        })
    }
}

/// Quantizes Bob's outcomes into interval labels.
pub fn quantize(q: &QuantizerConfig, values: &[f64]) -> Vec<u8> {
    values.iter().map(|&y| q.interval(y)).collect()
}

fn bit_plane(labels: &[u8], level: usize) -> Vec<u8> {
    labels.iter().map(|&l| (l >> level) & 1).collect()
}

/// The concatenated undisclosed planes, LSB plane first: the outer-code
/// payload and the input to privacy amplification.
pub fn secret_planes(labels: &[u8], spec: &MultilevelSpec) -> Vec<u8> {
    spec.coded_levels().flat_map(|j| bit_plane(labels, j)).collect()
}

/// Bob's side: disclosed planes, per-level syndromes and outer parity.
pub fn encode_syndromes(labels: &[u8], codes: &MultilevelCodes, block_id: u32) -> Result<SyndromeSet> {
    let spec = &codes.spec;
    if labels.len() != spec.block_len {
        return Err(ReconError::SizeMismatch {
            expected: spec.block_len,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_INTERVALS) {
        return Err(ReconError::InvalidParameter(format!("label {bad}")));
    }
    let mut levels = Vec::with_capacity(NUM_LEVELS);
    for j in 0..NUM_LEVELS {
        let plane = bit_plane(labels, j);
        levels.push(match &codes.ldpc[j] {
            None => LevelPayload::Disclosed(plane),
            Some(code) => LevelPayload::Syndrome {
                code_seed: code.seed(),
                bits: code.syndrome(&plane)?,
            },
        });
    }
    let outer_parity = match &codes.outer {
        Some(bch) => bch.parity(&secret_planes(labels, spec))?,
        None => Vec::new(),
    };
    Ok(SyndromeSet {
        block_id,
        levels,
        outer_parity,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    /// Bob's labels, present only when every check passed.
    pub labels: Option<Vec<u8>>,
    pub sweeps: usize,
    pub iterations: [usize; NUM_LEVELS],
    pub level_converged: [bool; NUM_LEVELS],
    pub outer_corrected: usize,
}

impl DecodeReport {
    pub fn is_success(&self) -> bool {
        self.labels.is_some()
    }
}

enum LevelState {
    Known(Vec<u8>),
    /// Extrinsic LLRs (nats) from the last decoding attempt.
    Soft(Vec<f64>),
    Unknown,
}

const PROB_FLOOR: f64 = 1e-300;

/// Prior LLR of `level` for every symbol, combining the channel likelihood of
/// each interval with whatever is known about the other levels.
fn level_priors(probs: &[[f64; NUM_INTERVALS]], states: &[LevelState], level: usize) -> Vec<i32> {
    let max = LLR_MAX as f64 / LLR_SCALE as f64;
    let mut out = Vec::with_capacity(probs.len());
    for (k, p) in probs.iter().enumerate() {
        let mut w = *p;
        for (l, state) in states.iter().enumerate() {
            if l == level {
                continue;
            }
            match state {
                LevelState::Known(bits) => {
                    let b = bits[k];
                    for (i, wi) in w.iter_mut().enumerate() {
                        if (i >> l) & 1 != b as usize {
                            *wi = 0.0;
                        }
                    }
                }
                LevelState::Soft(ext) => {
                    let p0 = 1.0 / (1.0 + (-ext[k]).exp());
                    for (i, wi) in w.iter_mut().enumerate() {
                        *wi *= if (i >> l) & 1 == 0 { p0 } else { 1.0 - p0 };
                    }
                }
                LevelState::Unknown => {}
            }
        }
        let (mut s0, mut s1) = (0.0, 0.0);
        for (i, wi) in w.iter().enumerate() {
            if (i >> level) & 1 == 0 {
                s0 += wi;
            } else {
                s1 += wi;
            }
        }
        let llr = (s0.max(PROB_FLOOR) / s1.max(PROB_FLOOR)).ln().clamp(-max, max);
        out.push(SumProduct::quantize_llr(llr));
    }
    out
}

/// Alice's side. `alice` holds her values on the quadrature Bob measured.
/// Failure is reported as `labels: None`; it is detected by the LDPC
/// syndromes and the outer code, never returned as wrong labels.
pub fn decode_multilevel(
    alice: &[f64],
    syndromes: &SyndromeSet,
    codes: &MultilevelCodes,
    quantizer: &QuantizerConfig,
    link: &GaussianLink,
) -> Result<DecodeReport> {
    let spec = &codes.spec;
    let n = spec.block_len;
    if alice.len() != n {
        return Err(ReconError::SizeMismatch {
            expected: n,
            got: alice.len(),
        });
    }
    if syndromes.levels.len() != NUM_LEVELS {
        return Err(ReconError::SizeMismatch {
            expected: NUM_LEVELS,
            got: syndromes.levels.len(),
        });
    }
    if syndromes.outer_parity.len() != codes.outer_parity_len() {
        return Err(ReconError::SizeMismatch {
            expected: codes.outer_parity_len(),
            got: syndromes.outer_parity.len(),
        });
    }

    let mut states: Vec<LevelState> = Vec::with_capacity(NUM_LEVELS);
    let mut targets: Vec<Option<&[u8]>> = vec![None; NUM_LEVELS];
    for j in 0..NUM_LEVELS {
        match (&syndromes.levels[j], &codes.ldpc[j]) {
            (LevelPayload::Disclosed(bits), None) if bits.len() == n => {
                states.push(LevelState::Known(bits.clone()))
            }
            (LevelPayload::Syndrome { code_seed, bits }, Some(code))
                if *code_seed == code.seed() && bits.len() == code.m() =>
            {
                targets[j] = Some(bits);
                states.push(LevelState::Unknown);
            }
            _ => {
                return Err(ReconError::InvalidParameter(format!(
                    "level {j} payload does not match the code set"
                )))
            }
        }
    }

    let probs: Vec<[f64; NUM_INTERVALS]> = alice
        .iter()
        .map(|&x| {
            let mut p = quantizer.bin_probs(link.gain * x, link.noise_var);
            for v in p.iter_mut() {
                *v = v.max(PROB_FLOOR);
            }
            p
        })
        .collect();

    let spa = SumProduct::new(spec.max_iterations);
    let mut report = DecodeReport {
        labels: None,
        sweeps: 0,
        iterations: [0; NUM_LEVELS],
        level_converged: [false; NUM_LEVELS],
        outer_corrected: 0,
    };
    let mut decoders: Vec<Option<DecoderState>> = (0..NUM_LEVELS)
        .map(|j| codes.ldpc[j].as_deref().map(DecoderState::new))
        .collect();
    let mut hard: Vec<Option<Vec<u8>>> = vec![None; NUM_LEVELS];
    // Short bursts per level with persistent messages: the levels exchange
    // extrinsic information many times within the same inner budget.
    for sweep in 1..=spec.max_sweeps {
        report.sweeps = sweep;
        let mut progressed = false;
        for j in spec.coded_levels() {
            let budget = spec.max_iterations - report.iterations[j];
            if report.level_converged[j] || budget == 0 {
                continue;
            }
            let (Some(code), Some(target), Some(state)) =
                (&codes.ldpc[j], targets[j], decoders[j].as_mut())
            else {
                continue;
            };
            progressed = true;
            let prior = level_priors(&probs, &states, j);
            let out = spa.resume(code, target, &prior, state, budget.min(spec.iterations_per_sweep))?;
            report.iterations[j] += out.iterations;
            if out.converged {
                report.level_converged[j] = true;
                states[j] = LevelState::Known(out.bits.clone());
            } else {
                let ext = out
                    .posterior
                    .iter()
                    .zip(&prior)
                    .map(|(&post, &pr)| (post - pr) as f64 / LLR_SCALE as f64)
                    .collect();
                states[j] = LevelState::Soft(ext);
            }
            hard[j] = Some(out.bits);
        }
        if !progressed || spec.coded_levels().all(|j| report.level_converged[j]) {
            break;
        }
    }

    // Assemble the candidate planes and let the outer code clean up.
    let mut planes: Vec<Vec<u8>> = (0..NUM_LEVELS)
        .map(|j| match &states[j] {
            LevelState::Known(bits) => bits.clone(),
            _ => hard[j].clone().unwrap_or_else(|| vec![0; n]),
        })
        .collect();
    if let Some(bch) = &codes.outer {
        let mut payload: Vec<u8> = spec.coded_levels().flat_map(|j| planes[j].clone()).collect();
        let mut parity = syndromes.outer_parity.clone();
        match bch.decode(&mut payload, &mut parity)? {
            BchOutcome::Failure => return Ok(report),
            BchOutcome::Corrected(k) => report.outer_corrected = k,
            BchOutcome::Clean => {}
        }
        if !bch.check(&payload, &parity) {
            return Ok(report);
        }
        for (slot, j) in spec.coded_levels().enumerate() {
            planes[j].copy_from_slice(&payload[slot * n..(slot + 1) * n]);
        }
    }
    for j in spec.coded_levels() {
        let (Some(code), Some(target)) = (&codes.ldpc[j], targets[j]) else {
            continue;
        };
        if code.syndrome(&planes[j])? != target {
            return Ok(report);
        }
    }
    let labels = (0..n)
        .map(|k| (0..NUM_LEVELS).fold(0u8, |acc, j| acc | (planes[j][k] << j)))
        .collect();
    report.labels = Some(labels);
    Ok(report)
}

/// β = (H(Q(Y)) − M_rec/n) / I(X;Y), bounded by I(X;Q(Y)) / I(X;Y).
pub fn efficiency_beta(
    disclosed_bits: usize,
    block_len: usize,
    profiles: &LevelProfiles,
    link: &GaussianLink,
) -> Result<f64> {
    let i_xy = link.mutual_info();
    if !(i_xy > 0.0) || block_len == 0 {
        return Err(ReconError::InvalidParameter("no mutual information".into()));
    }
    let beta = (profiles.entropy_q - disclosed_bits as f64 / block_len as f64) / i_xy;
    let bound = profiles.info_xq / i_xy;
    if !(0.0..=bound + 1e-12).contains(&beta) {
        return Err(ReconError::EfficiencyOutOfRange { beta, bound });
    }
    Ok(beta)
}

/// Nominal disclosed-bit count for a spec without building the LDPC codes.
pub fn nominal_disclosed_bits(spec: &MultilevelSpec) -> Result<usize> {
    spec.validate()?;
    let n = spec.block_len;
    let planes: usize = spec
        .rates
        .iter()
        .map(|&r| if r == 0.0 { n } else { LdpcCode::checks_for(n, r) })
        .sum();
    let budget = spec.outer_parity_budget();
    let outer = if spec.outer_payload_len() > 0 && budget > 0 {
        BchCode::for_payload(spec.outer_payload_len(), budget)?.parity_len()
    } else {
        0
    };
    Ok(planes + outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::OperatingPoint;
    use crate::recon::{design_quantizer, level_profiles, WidthRule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn reference_link() -> GaussianLink {
        let op = OperatingPoint::link_25km();
        GaussianLink::from_model(&op.modulation, &op.channel, &op.detector)
    }

    fn frame(link: &GaussianLink, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let sx = link.va.sqrt();
        let sz = link.noise_var.sqrt();
        let x: Vec<f64> = (0..n).map(|_| sx * rng.sample::<f64, _>(StandardNormal)).collect();
        let y = x
            .iter()
            .map(|&x| link.gain * x + sz * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (x, y)
    }

    #[test]
    fn disclosed_bit_accounting() {
        let spec = MultilevelSpec::full_length();
        assert_eq!(spec.outer_payload_len(), 400_000);
        assert_eq!(spec.outer_parity_budget(), 800);
        assert_eq!(nominal_disclosed_bits(&spec).unwrap(), 526_000 + 798);
        let desk = MultilevelSpec::desk();
        assert_eq!(nominal_disclosed_bits(&desk).unwrap(), 26_300 + 32);
    }

    #[test]
    fn nominal_efficiency() {
        let link = reference_link();
        let q = design_quantizer(&link, WidthRule::default()).unwrap().config;
        let prof = level_profiles(&q, &link).unwrap();
        let spec = MultilevelSpec::full_length();
        let beta = efficiency_beta(nominal_disclosed_bits(&spec).unwrap(), spec.block_len, &prof, &link)
            .unwrap();
        assert_close!(beta, 0.898, 0.004);
        // Disclosing fewer bits raises β.
        let mut lighter = spec;
        lighter.rates[2] = 0.44;
        let beta2 =
            efficiency_beta(nominal_disclosed_bits(&lighter).unwrap(), spec.block_len, &prof, &link)
                .unwrap();
        assert!(beta2 > beta);
        assert!(matches!(
            efficiency_beta(4 * spec.block_len, spec.block_len, &prof, &link),
            Err(ReconError::EfficiencyOutOfRange { .. })
        ));
    }

    #[test]
    fn syndrome_payload_roundtrip() {
        let spec = MultilevelSpec {
            block_len: 1000,
            rates: [0.0, 0.0, 0.5, 0.9],
            outer_rate: 0.99,
            ..MultilevelSpec::desk()
        };
        let codes = MultilevelCodes::build(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..1000).map(|_| rng.random_range(0..16)).collect();
        let set = encode_syndromes(&labels, &codes, 42).unwrap();
        assert_eq!(set.disclosed_bits(), codes.disclosed_bits());
        assert_eq!(SyndromeSet::from_bytes(&set.to_bytes()).unwrap(), set);
        assert!(SyndromeSet::from_bytes(&set.to_bytes()[..20]).is_err());

        let zero = encode_syndromes(&vec![0; 1000], &codes, 0).unwrap();
        for level in &zero.levels {
            match level {
                LevelPayload::Disclosed(b) | LevelPayload::Syndrome { bits: b, .. } => {
                    assert!(b.iter().all(|&x| x == 0))
                }
            }
        }
        assert!(encode_syndromes(&labels[..10], &codes, 0).is_err());
    }

    #[test]
    fn noiseless_frame_decodes_in_one_iteration() {
        let spec = MultilevelSpec {
            block_len: 2000,
            rates: [0.0, 0.0, 0.42, 0.9],
            outer_rate: 0.99,
            ..MultilevelSpec::desk()
        };
        let codes = MultilevelCodes::build(spec).unwrap();
        let link = GaussianLink {
            va: 18.5,
            gain: 1.0,
            noise_var: 1e-8,
        };
        let q = QuantizerConfig::new(0.35 * link.sigma_y()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Keep values away from interval boundaries.
        let x: Vec<f64> = (0..2000)
            .map(|_| {
                let i = rng.random_range(0..16) as f64;
                (i - 7.5) * q.interval_width
            })
            .collect();
        let labels = quantize(&q, &x);
        let set = encode_syndromes(&labels, &codes, 0).unwrap();
        let report = decode_multilevel(&x, &set, &codes, &q, &link).unwrap();
        assert_eq!(report.labels.as_deref(), Some(&labels[..]));
        assert_eq!(report.iterations, [0, 0, 1, 1]);
    }

    /// With a finite-length margin below the level-3 capacity (≈ 0.45),
    /// desk frames decode; every success must reproduce Bob's labels.
    #[test]
    fn desk_frames_decode_to_bobs_labels() {
        let link = reference_link();
        let q = design_quantizer(&link, WidthRule::default()).unwrap().config;
        let spec = MultilevelSpec {
            rates: [0.0, 0.0, 0.36, 0.95],
            ..MultilevelSpec::desk()
        };
        let codes = MultilevelCodes::build(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ok = 0;
        for id in 0..10 {
            let (x, y) = frame(&link, 10_000, &mut rng);
            let labels = quantize(&q, &y);
            let set = encode_syndromes(&labels, &codes, id).unwrap();
            let report = decode_multilevel(&x, &set, &codes, &q, &link).unwrap();
            if let Some(got) = report.labels {
                assert_eq!(got, labels);
                assert!(report.level_converged[2] && report.level_converged[3]);
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10");
    }

    #[test]
    fn corrupted_syndrome_is_detected() {
        let link = reference_link();
        let q = design_quantizer(&link, WidthRule::default()).unwrap().config;
        let spec = MultilevelSpec {
            rates: [0.0, 0.0, 0.36, 0.95],
            ..MultilevelSpec::desk()
        };
        let codes = MultilevelCodes::build(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = frame(&link, 10_000, &mut rng);
        let labels = quantize(&q, &y);
        let mut set = encode_syndromes(&labels, &codes, 0).unwrap();
        if let LevelPayload::Syndrome { bits, .. } = &mut set.levels[3] {
            bits[7] ^= 1;
        }
        let report = decode_multilevel(&x, &set, &codes, &q, &link).unwrap();
        assert!(!report.is_success());
    }

    #[test]
    fn mismatched_payload_is_rejected() {
        let spec = MultilevelSpec {
            block_len: 1000,
            rates: [0.0, 0.0, 0.5, 0.9],
            outer_rate: 0.99,
            ..MultilevelSpec::desk()
        };
        let codes = MultilevelCodes::build(spec).unwrap();
        let labels = vec![3u8; 1000];
        let mut set = encode_syndromes(&labels, &codes, 0).unwrap();
        let q = QuantizerConfig::new(0.7).unwrap();
        let x = vec![0.0; 1000];
        assert!(decode_multilevel(&x[..5], &set, &codes, &q, &reference_link()).is_err());
        if let LevelPayload::Syndrome { code_seed, .. } = &mut set.levels[2] {
            *code_seed += 1;
        }
        assert!(decode_multilevel(&x, &set, &codes, &q, &reference_link()).is_err());
    }
}
