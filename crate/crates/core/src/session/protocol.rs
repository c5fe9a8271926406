//! The two endpoint state machines.

use std::io::{Read, Write};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::estimator::{
    calibrate_shot_noise, cross_check, entanglement_breaking, estimate_params,
    estimate_transmission_from_tests, lo_within_tolerance, LO_TOLERANCE,
};
use crate::privamp::{
    composite_universality, hash_to_length, privacy_amplify, unix_time, HashSeed, Hasher,
    KeyBudget, KeyRecord, KeyWriter,
};
use crate::rates::{eve_info_individual, holevo_bound, mutual_info_ab, noise_budget};
use crate::recon::{
    decode_multilevel, efficiency_beta, encode_syndromes, level_profiles, pack_bits, quantize,
    secret_planes, unpack_bits, GaussianLink, LevelPayload, MultilevelCodes, MultilevelSpec,
    QuantizerConfig, SyndromeSet,
};
use crate::simkit::{test_pulse_pattern, BlockSpec, PulseRole, Quadrature};

use super::link::{pack_roles, unpack_roles, QuantumSource};
use super::wire::{Authenticator, Frame, MsgType, PayloadReader, PayloadWriter};
use super::{
    BlockKey, BlockRecord, BlockStatus, Direction, EveBound, Fault, Result, Role, SessionConfig,
    SessionError, SessionOutcome, SessionReport, TranscriptEntry, CONFIRM_DIGEST_BITS,
};

const CONFIRM_OK: u8 = 0;
const CONFIRM_DECODE_FAILED: u8 = 1;
const CONFIRM_ESTIMATION_ALARM: u8 = 2;
const CONFIRM_NO_KEY: u8 = 3;
const ACK_MATCH: u8 = 0;
const ACK_MISMATCH: u8 = 1;

const ABORT_SECURITY: u8 = 1;
const ABORT_AUTH: u8 = 2;
const ABORT_CONFIG: u8 = 3;
const ABORT_LOCAL: u8 = 4;

/// Parameters both sides must agree on before the first block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Hello {
    role: super::Role,
    version: u8,
    hash_spec: String,
    multilevel: MultilevelSpec,
    block: BlockSpec,
    blocks: u32,
    interval_width: f64,
    security_bits: usize,
    bound: EveBound,
}

impl Hello {
    fn new(role: Role, cfg: &SessionConfig, q: &QuantizerConfig) -> Self {
        Hello {
            role,
            version: super::VERSION,
            hash_spec: cfg.hash.id(),
            multilevel: cfg.multilevel,
            block: cfg.block,
            blocks: cfg.blocks,
            interval_width: q.interval_width,
            security_bits: cfg.security_bits,
            bound: cfg.bound,
        }
    }

    fn agrees_with(&self, other: &Hello) -> bool {
        Hello { role: other.role, ..self.clone() } == *other
    }
}

fn abort_error(frame: &Frame) -> SessionError {
    let text = String::from_utf8_lossy(frame.payload.get(1..).unwrap_or_default()).into_owned();
    match frame.payload.first() {
        Some(&ABORT_SECURITY) => SessionError::PeerAlarm(text),
        _ => SessionError::PeerAborted(text),
    }
}

struct Channel<'a, T> {
    io: T,
    auth: &'a dyn Authenticator,
    transcript: Vec<TranscriptEntry>,
}

impl<T: Read + Write> Channel<'_, T> {
    fn send(&mut self, msg_type: MsgType, block_id: u32, payload: Vec<u8>) -> Result<()> {
        self.transcript.push(TranscriptEntry {
            direction: Direction::Sent,
            msg_type,
            block_id,
            payload_len: payload.len(),
        });
        match Frame::new(msg_type, block_id, payload).write_to(&mut self.io, self.auth) {
            // A peer that hung up usually left an ABORT explaining why.
            Err(SessionError::Io(e)) => match Frame::read_from(&mut self.io, self.auth) {
                Ok(Some(f)) if f.msg_type == MsgType::Abort => Err(abort_error(&f)),
                _ => Err(SessionError::Io(e)),
            },
            r => r,
        }
    }

    fn abort(&mut self, reason: u8, text: &str) {
        let mut p = PayloadWriter::default();
        p.u8(reason).bytes(text.as_bytes());
        // Best effort: the peer may already be gone.
        let _ = self.send(MsgType::Abort, 0, p.0);
    }

    /// Next frame, which must be `expected` for `block_id`. ABORT from the
    /// peer and authentication failures end the session.
    fn expect(&mut self, expected: MsgType, block_id: u32) -> Result<Frame> {
        let frame = match Frame::read_from(&mut self.io, self.auth) {
            Ok(Some(f)) => f,
            Ok(None) => return Err(SessionError::Protocol("peer closed the stream".into())),
            Err(e @ SessionError::Authentication { .. }) => {
                self.abort(ABORT_AUTH, "authentication failure");
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        self.transcript.push(TranscriptEntry {
            direction: Direction::Received,
            msg_type: frame.msg_type,
            block_id: frame.block_id,
            payload_len: frame.payload.len(),
        });
        if frame.msg_type == MsgType::Abort {
            return Err(abort_error(&frame));
        }
        if frame.msg_type != expected || (expected != MsgType::Hello && frame.block_id != block_id)
        {
            let msg = format!(
                "expected {expected:?} for block {block_id}, got {:?} for block {}",
                frame.msg_type, frame.block_id
            );
            self.abort(ABORT_LOCAL, &msg);
            return Err(SessionError::Protocol(msg));
        }
        Ok(frame)
    }
}

fn confirm_digest(auth: &dyn Authenticator, block_id: u32, key: &[u8]) -> [u8; 4] {
    let mut msg = b"KEY_CONFIRM".to_vec();
    msg.extend_from_slice(&block_id.to_be_bytes());
    msg.extend_from_slice(&pack_bits(key));
    auth.tag(&msg)[..4].try_into().unwrap()
}

struct Shared {
    codes: Arc<MultilevelCodes>,
    hasher: Hasher,
    quantizer: QuantizerConfig,
}

fn setup(cfg: &SessionConfig) -> Result<Shared> {
    cfg.validate()?;
    Ok(Shared {
        codes: MultilevelCodes::shared(cfg.multilevel)?,
        hasher: Hasher::new(cfg.hash.clone())?,
        quantizer: cfg.quantizer()?,
    })
}

fn emit_key(
    sink: &mut Option<&mut KeyWriter>,
    keys: &mut Vec<BlockKey>,
    block_id: u32,
    key: Vec<u8>,
    cfg: &SessionConfig,
    started: f64,
) -> Result<()> {
    if let Some(w) = sink.as_deref_mut() {
        let (_, eps_c, _) = composite_universality(key.len(), &cfg.hash);
        w.append(
            &key,
            &KeyRecord {
                block_id,
                k: key.len(),
                s: cfg.security_bits,
                eps_c,
                started,
                finished: unix_time(),
            },
        )?;
    }
    keys.push(BlockKey { block_id, bits: key });
    Ok(())
}

/// Alice: prepares states, estimates the channel from Bob's reveal,
/// decodes his syndromes, hashes and confirms.
pub fn run_alice<T: Read + Write>(
    io: T,
    cfg: &SessionConfig,
    auth: &dyn Authenticator,
    source: &mut dyn QuantumSource,
    mut sink: Option<&mut KeyWriter>,
) -> Result<SessionOutcome> {
    let shared = setup(cfg)?;
    let mut ch = Channel {
        io,
        auth,
        transcript: Vec::new(),
    };
    let start = Instant::now();
    let hello = ch.expect(MsgType::Hello, 0)?;
    let theirs: Hello = serde_json::from_slice(&hello.payload)
        .map_err(|e| SessionError::Protocol(format!("bad HELLO: {e}")))?;
    let ours = Hello::new(Role::Alice, cfg, &shared.quantizer);
    if theirs.role != Role::Bob || !ours.agrees_with(&theirs) {
        ch.abort(ABORT_CONFIG, "parameter mismatch");
        return Err(SessionError::Config("peer HELLO does not match local parameters".into()));
    }
    ch.send(MsgType::Hello, 0, serde_json::to_vec(&ours).expect("serializable"))?;

    let op = &cfg.operating_point;
    let n = cfg.key_symbols();
    let mut records = Vec::new();
    let mut keys = Vec::new();
    let mut alarm = None;
    for block_id in 0..cfg.blocks {
        let t0 = Instant::now();
        let started = unix_time();
        let mut rec = BlockRecord::new(block_id);
        rec.t_true = source.true_transmission(block_id);
        let block = source.prepare(block_id)?;
        let roles: Vec<PulseRole> = block.pulses.iter().map(|p| p.role).collect();
        let mut meta = PayloadWriter::default();
        meta.u32(roles.len() as u32).bytes(&pack_roles(&roles));
        ch.send(MsgType::BlockMeta, block_id, meta.0)?;

        let sift = ch.expect(MsgType::SiftReveal, block_id)?;
        let quads: Vec<Quadrature> = unpack_bits(&sift.payload, roles.len())
            .into_iter()
            .map(|b| if b == 1 { Quadrature::P } else { Quadrature::X })
            .collect();
        if sift.payload.len() != roles.len().div_ceil(8) {
            return Err(SessionError::Protocol("SIFT_REVEAL length".into()));
        }

        let est_frame = ch.expect(MsgType::EstimateReveal, block_id)?;
        let mut r = PayloadReader::new(&est_frame.payload, "ESTIMATE_REVEAL");
        let shot_noise = r.f64()?;
        let lo_level = r.f64()?;
        let t_test = (r.f64()?, r.f64()?);
        let count = r.u32()? as usize;
        let revealed_outcomes: Vec<f64> = (0..count).map(|_| r.f64()).collect::<Result<_>>()?;
        r.finish()?;

        let syn_frame = ch.expect(MsgType::Syndromes, block_id)?;
        let syndromes = SyndromeSet::from_bytes(&syn_frame.payload)?;
        rec.disclosed_bits = syndromes.disclosed_bits();
        let seed_frame = ch.expect(MsgType::PaSeeds, block_id)?;
        let seed = HashSeed::from_bytes(&cfg.hash, &seed_frame.payload)?;

        let mut reveal_pairs = Vec::with_capacity(count);
        let mut key_values = Vec::with_capacity(n);
        for (p, &q) in block.pulses.iter().zip(&quads) {
            match p.role {
                PulseRole::Reveal => reveal_pairs.push(p.alice_on(q)),
                PulseRole::Key => key_values.push(p.alice_on(q)),
                PulseRole::Test => {}
            }
        }
        if reveal_pairs.len() != count || key_values.len() != n {
            return Err(SessionError::Protocol("reveal/key counts disagree with roles".into()));
        }
        let pairs: Vec<(f64, f64)> = reveal_pairs.into_iter().zip(revealed_outcomes).collect();
        rec.t_test = Some(t_test.0);

        let est = match estimate_params(
            &pairs,
            &op.detector,
            &op.modulation,
            shot_noise,
            cfg.entropy_seed ^ ((block_id as u64) << 32),
        ) {
            Ok(e) => Some(e),
            Err(_) => None,
        };
        if let Some(e) = &est {
            rec.t_hat = Some(e.t_hat);
            rec.eps_hat = Some(e.eps_hat);
        }

        // Security alarms end the session; consistency alarms drop the block.
        let security = match &est {
            Some(e) if entanglement_breaking(e.eps_hat, cfg.eb_delta) => Some(format!(
                "block {block_id}: excess noise {:.3} above the entanglement-breaking threshold",
                e.eps_hat
            )),
            _ if !lo_within_tolerance(lo_level, LO_TOLERANCE) => Some(format!(
                "block {block_id}: local-oscillator level {lo_level:.4} outside tolerance"
            )),
            _ => None,
        };
        if let Some(reason) = security {
            rec.status = BlockStatus::SecurityAlarm;
            rec.block_seconds = t0.elapsed().as_secs_f64();
            records.push(rec);
            ch.abort(ABORT_SECURITY, &reason);
            alarm = Some(reason);
            break;
        }
        let consistent = est.as_ref().is_some_and(|e| {
            cross_check(t_test, (e.t_hat, e.t_stderr), cfg.cross_check_sigmas).is_ok()
        });

        let mut confirm = PayloadWriter::default();
        let mut pending_key = None;
        if !consistent {
            rec.status = BlockStatus::EstimationAlarm;
            confirm.u8(CONFIRM_ESTIMATION_ALARM);
        } else {
            let e = est.expect("checked above");
            let channel = e.conservative_channel();
            let link = GaussianLink::from_model(&op.modulation, &channel, &op.detector);
            let td = Instant::now();
            let decoded = decode_multilevel(
                &key_values,
                &syndromes,
                &shared.codes,
                &shared.quantizer,
                &link,
            )?;
            rec.decode_seconds = td.elapsed().as_secs_f64();
            rec.decode_iterations = Some(decoded.iterations);
            match decoded.labels {
                None => {
                    rec.status = BlockStatus::DecodeFailed;
                    confirm.u8(CONFIRM_DECODE_FAILED);
                }
                Some(labels) => {
                    let budget = noise_budget(&channel, &op.detector)?;
                    let i_ab = mutual_info_ab(&op.modulation, &budget);
                    let i_e = match cfg.bound {
                        EveBound::Shannon => {
                            eve_info_individual(&op.modulation, &channel, &op.detector)?
                        }
                        EveBound::Holevo => {
                            holevo_bound(&op.modulation, &channel, &op.detector)?.chi_be
                        }
                    };
                    let profiles = level_profiles(&shared.quantizer, &link)?;
                    let beta = efficiency_beta(syndromes.disclosed_bits(), n, &profiles, &link).ok();
                    let delta = beta.map_or(f64::NEG_INFINITY, |b| b * i_ab - i_e);
                    rec.beta = beta;
                    rec.delta_i_eff = beta.map(|_| delta);
                    let budget = KeyBudget::new(n, delta, cfg.security_bits)
                        .with_leak(CONFIRM_DIGEST_BITS);
                    match budget.key_bits() {
                        None => {
                            rec.status = BlockStatus::NoKey;
                            confirm.u8(CONFIRM_NO_KEY);
                        }
                        Some(_) => {
                            let planes = secret_planes(&labels, &cfg.multilevel);
                            let (key, pa) = privacy_amplify(&shared.hasher, &planes, &budget, &seed)?;
                            let digest = confirm_digest(auth, block_id, &key);
                            confirm
                                .u8(CONFIRM_OK)
                                .u32(pa.key_bits as u32)
                                .bytes(&digest);
                            pending_key = Some(key);
                        }
                    }
                }
            }
        }
        // Estimates travel with the confirmation so both reports agree.
        let mut tail = PayloadWriter::default();
        tail.f64(rec.t_hat.unwrap_or(f64::NAN))
            .f64(rec.eps_hat.unwrap_or(f64::NAN))
            .f64(rec.beta.unwrap_or(f64::NAN))
            .f64(rec.delta_i_eff.unwrap_or(f64::NAN));
        if pending_key.is_none() {
            confirm.u32(0).bytes(&[0; 4]);
        }
        confirm.bytes(&tail.0);
        ch.send(MsgType::KeyConfirm, block_id, confirm.0)?;

        if let Some(key) = pending_key {
            let ack = ch.expect(MsgType::KeyConfirm, block_id)?;
            let mut r = PayloadReader::new(&ack.payload, "KEY_CONFIRM ack");
            let status = r.u8()?;
            r.finish()?;
            if status == ACK_MATCH {
                rec.status = BlockStatus::Confirmed;
                rec.key_bits = key.len();
                emit_key(&mut sink, &mut keys, block_id, key, cfg, started)?;
            } else {
                rec.status = BlockStatus::ConfirmMismatch;
            }
        }
        rec.block_seconds = t0.elapsed().as_secs_f64();
        records.push(rec);
    }
    let report = SessionReport::build(
        Role::Alice,
        cfg,
        records,
        ch.transcript,
        alarm,
        start.elapsed().as_secs_f64(),
    );
    Ok(SessionOutcome { keys, report })
}

fn nan_to_none(x: f64) -> Option<f64> {
    (!x.is_nan()).then_some(x)
}

/// Bob: measures, reveals, sends syndromes and hash seeds, then checks
/// Alice's confirmation.
pub fn run_bob<T: Read + Write>(
    io: T,
    cfg: &SessionConfig,
    auth: &dyn Authenticator,
    source: &mut dyn QuantumSource,
    mut sink: Option<&mut KeyWriter>,
) -> Result<SessionOutcome> {
    let shared = setup(cfg)?;
    let mut ch = Channel {
        io,
        auth,
        transcript: Vec::new(),
    };
    let start = Instant::now();
    let ours = Hello::new(Role::Bob, cfg, &shared.quantizer);
    ch.send(MsgType::Hello, 0, serde_json::to_vec(&ours).expect("serializable"))?;
    let reply = ch.expect(MsgType::Hello, 0)?;
    let theirs: Hello = serde_json::from_slice(&reply.payload)
        .map_err(|e| SessionError::Protocol(format!("bad HELLO: {e}")))?;
    if theirs.role != Role::Alice || !ours.agrees_with(&theirs) {
        ch.abort(ABORT_CONFIG, "parameter mismatch");
        return Err(SessionError::Config("peer HELLO does not match local parameters".into()));
    }

    let op = &cfg.operating_point;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.entropy_seed);
    let mut records = Vec::new();
    let mut keys = Vec::new();
    let mut alarm = None;
    for block_id in 0..cfg.blocks {
        let t0 = Instant::now();
        let started = unix_time();
        let mut rec = BlockRecord::new(block_id);
        let meta = match ch.expect(MsgType::BlockMeta, block_id) {
            Ok(m) => m,
            Err(SessionError::PeerAlarm(reason)) => {
                alarm = Some(reason);
                break;
            }
            Err(e) => return Err(e),
        };
        let mut r = PayloadReader::new(&meta.payload, "BLOCK_META");
        let total = r.u32()? as usize;
        let roles = unpack_roles(r.rest(), total)
            .ok_or_else(|| SessionError::Protocol("malformed role map".into()))?;
        let measured = source.measure(block_id)?;
        if measured.outcomes.len() != total {
            return Err(SessionError::Protocol("role map does not match the block".into()));
        }

        let shot = calibrate_shot_noise(&measured.vacuum, op.detector.electronic_noise)?;
        let mut tests = Vec::new();
        let mut reveal = Vec::new();
        let mut key_outcomes = Vec::new();
        for (&role, (&q, &y)) in roles
            .iter()
            .zip(measured.quadratures.iter().zip(&measured.outcomes))
        {
            match role {
                PulseRole::Test => {
                    let (x, p) = test_pulse_pattern(tests.len(), op.modulation.variance);
                    tests.push((if q == Quadrature::X { x } else { p }, y));
                }
                PulseRole::Reveal => reveal.push(y),
                PulseRole::Key => key_outcomes.push(y),
            }
        }
        let t_test = estimate_transmission_from_tests(&tests, &op.detector, shot.level)?;
        rec.t_test = Some(t_test.t_hat);

        let quad_bits: Vec<u8> = measured
            .quadratures
            .iter()
            .map(|&q| (q == Quadrature::P) as u8)
            .collect();
        ch.send(MsgType::SiftReveal, block_id, pack_bits(&quad_bits))?;

        let mut p = PayloadWriter::default();
        p.f64(shot.level)
            .f64(measured.lo_level)
            .f64(t_test.t_hat)
            .f64(t_test.stderr)
            .u32(reveal.len() as u32);
        for &y in &reveal {
            p.f64(y);
        }
        ch.send(MsgType::EstimateReveal, block_id, p.0)?;

        let scale = shot.level.sqrt().recip();
        let normalized: Vec<f64> = key_outcomes.iter().map(|y| y * scale).collect();
        let labels = quantize(&shared.quantizer, &normalized);
        let mut syndromes = encode_syndromes(&labels, &shared.codes, block_id)?;
        if cfg.fault == Some(Fault::CorruptSyndrome { block_id }) {
            if let Some(LevelPayload::Syndrome { bits, .. }) = syndromes
                .levels
                .iter_mut()
                .find(|l| matches!(l, LevelPayload::Syndrome { .. }))
            {
                bits[0] ^= 1;
            }
        }
        rec.disclosed_bits = syndromes.disclosed_bits();
        ch.send(MsgType::Syndromes, block_id, syndromes.to_bytes())?;
        let seed = HashSeed::generate(&cfg.hash, &mut rng);
        ch.send(MsgType::PaSeeds, block_id, seed.to_bytes())?;

        let confirm = match ch.expect(MsgType::KeyConfirm, block_id) {
            Ok(c) => c,
            Err(SessionError::PeerAlarm(reason)) => {
                rec.status = BlockStatus::SecurityAlarm;
                rec.block_seconds = t0.elapsed().as_secs_f64();
                records.push(rec);
                alarm = Some(reason);
                break;
            }
            Err(e) => return Err(e),
        };
        let mut r = PayloadReader::new(&confirm.payload, "KEY_CONFIRM");
        let status = r.u8()?;
        let k = r.u32()? as usize;
        let digest: [u8; 4] = r.take(4)?.try_into().unwrap();
        rec.t_hat = nan_to_none(r.f64()?);
        rec.eps_hat = nan_to_none(r.f64()?);
        rec.beta = nan_to_none(r.f64()?);
        rec.delta_i_eff = nan_to_none(r.f64()?);
        r.finish()?;
        rec.status = match status {
            CONFIRM_OK => {
                let planes = secret_planes(&labels, &cfg.multilevel);
                let key = hash_to_length(&shared.hasher, &planes, k, &seed)?;
                let ok = confirm_digest(auth, block_id, &key) == digest;
                let mut ack = PayloadWriter::default();
                ack.u8(if ok { ACK_MATCH } else { ACK_MISMATCH });
                ch.send(MsgType::KeyConfirm, block_id, ack.0)?;
                if ok {
                    rec.key_bits = key.len();
                    emit_key(&mut sink, &mut keys, block_id, key, cfg, started)?;
                    BlockStatus::Confirmed
                } else {
                    BlockStatus::ConfirmMismatch
                }
            }
            CONFIRM_DECODE_FAILED => BlockStatus::DecodeFailed,
            CONFIRM_ESTIMATION_ALARM => BlockStatus::EstimationAlarm,
            CONFIRM_NO_KEY => BlockStatus::NoKey,
            s => return Err(SessionError::Protocol(format!("unknown confirmation status {s}"))),
        };
        rec.block_seconds = t0.elapsed().as_secs_f64();
        records.push(rec);
    }
    let report = SessionReport::build(
        Role::Bob,
        cfg,
        records,
        ch.transcript,
        alarm,
        start.elapsed().as_secs_f64(),
    );
    Ok(SessionOutcome { keys, report })
}

/// Runs both endpoints in one process over an in-memory pipe, each with its
/// own simulated half of the quantum link.
pub fn run_loopback(
    alice_cfg: &SessionConfig,
    bob_cfg: &SessionConfig,
    auth_key: &[u8],
) -> (Result<SessionOutcome>, Result<SessionOutcome>) {
    let (a_end, b_end) = super::loopback_pair();
    let auth = match super::HmacAuthenticator::new(auth_key) {
        Ok(a) => a,
        Err(e) => return (Err(e), Err(SessionError::Config("empty authentication key".into()))),
    };
    // Build codes once before the endpoints race for them.
    if let Err(e) = MultilevelCodes::shared(alice_cfg.multilevel) {
        return (Err(e.into()), Err(SessionError::Config("code construction failed".into())));
    }
    thread::scope(|s| {
        let alice = s.spawn(|| {
            let mut link = alice_cfg.simulated_link();
            run_alice(a_end, alice_cfg, &auth, &mut link, None)
        });
        let mut link = bob_cfg.simulated_link();
        let bob = run_bob(b_end, bob_cfg, &auth, &mut link, None);
        (alice.join().expect("alice thread panicked"), bob)
    })
}
