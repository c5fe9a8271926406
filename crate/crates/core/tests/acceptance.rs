//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! A criterion whose target is known to be out of reach prints
//! `FAIL (known)` and does not fail the run, provided every attainable part
//! of it still holds; anything else that fails makes the process exit 1.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvqkd::estimator::{entanglement_breaking, estimate_params};
use cvqkd::privamp::{cyclic_convolution, HashSeed, HashSpec, Hasher, Ntt};
use cvqkd::rates::{holevo_bound, secret_rates, ChannelModel, OperatingPoint};
use cvqkd::recon::{
    decode_multilevel, design_quantizer, efficiency_beta, encode_syndromes, level_profiles,
    nominal_disclosed_bits, quantize, GaussianLink, LdpcCode, MultilevelCodes, MultilevelSpec,
    WidthRule,
};
use cvqkd::session::{run_loopback, BlockStatus, SessionConfig};
use cvqkd::simkit::{self, AttackModel, BlockSpec};

enum Verdict {
    Pass,
    Fail,
    /// Fails only on a target recorded as unattainable.
    KnownFail,
}

struct Line {
    id: &'static str,
    title: &'static str,
    verdict: Verdict,
    detail: String,
}

fn within(x: f64, want: f64, tol: f64) -> bool {
    (x - want).abs() <= tol
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn reference_link() -> GaussianLink {
    let op = OperatingPoint::link_25km();
    GaussianLink::from_model(&op.modulation, &op.channel, &op.detector)
}

fn c1_rates() -> Line {
    let op = OperatingPoint::link_25km();
    let raw = OperatingPoint { beta: 1.0, ..op };
    let reps = 1000;
    let t0 = Instant::now();
    let mut r = raw.rates().unwrap();
    for _ in 1..reps {
        r = std::hint::black_box(raw).rates().unwrap();
    }
    let per_call = t0.elapsed().as_secs_f64() / reps as f64;
    let kb = |b: f64| r.per_second(b) / 1e3;
    let got = [kb(r.i_ab), kb(r.i_be), kb(r.chi_be), kb(r.delta_shannon_raw), kb(r.delta_holevo_raw)];
    let want = [365.0, 313.0, 316.0, 52.0, 49.0];
    let ok = got.iter().zip(want).all(|(g, w)| within(*g, w, 1.0)) && per_call < 1e-3;
    Line {
        id: "1",
        title: "rate reproduction",
        verdict: verdict(ok),
        detail: format!(
            "I_AB {:.2}, I_BE {:.2}, chi_BE {:.2}, dShannon {:.2}, dHolevo {:.2} kb/s; {:.1} us/eval",
            got[0],
            got[1],
            got[2],
            got[3],
            got[4],
            per_call * 1e6
        ),
    }
}

fn c2_effective() -> Line {
    let r = OperatingPoint::link_25km().rates().unwrap();
    let (s, h) = (r.delta_shannon_eff_per_s() / 1e3, r.delta_holevo_eff_per_s() / 1e3);
    Line {
        id: "2",
        title: "effective rates",
        verdict: verdict(within(s, 15.2, 0.3) && within(h, 12.3, 0.4)),
        detail: format!("Shannon {s:.3} kb/s (15.2 +- 0.3), Holevo {h:.3} kb/s (12.3 +- 0.4)"),
    }
}

fn c3_quantizer() -> Line {
    let link = reference_link();
    let design = design_quantizer(&link, WidthRule::default()).unwrap();
    let prof = level_profiles(&design.config, &link).unwrap();
    let want = [0.002, 0.013, 0.456, 0.981];
    let ok = within(prof.info_xq, 1.019, 0.005)
        && prof.ideal_rates.iter().zip(want).all(|(r, w)| within(*r, w, 0.01));
    Line {
        id: "3",
        title: "quantizer",
        verdict: verdict(ok),
        detail: format!(
            "I(X;Q) {:.4}; ideal rates {:.4}/{:.4}/{:.4}/{:.4}",
            prof.info_xq, prof.ideal_rates[0], prof.ideal_rates[1], prof.ideal_rates[2], prof.ideal_rates[3]
        ),
    }
}

fn c4_efficiency() -> Line {
    let link = reference_link();
    let q = design_quantizer(&link, WidthRule::default()).unwrap().config;
    let prof = level_profiles(&q, &link).unwrap();
    let beta = |rates: [f64; 4]| {
        let spec = MultilevelSpec {
            rates,
            ..MultilevelSpec::full_length()
        };
        efficiency_beta(nominal_disclosed_bits(&spec).unwrap(), spec.block_len, &prof, &link).unwrap()
    };
    let b95 = beta([0.0, 0.0, 0.42, 0.95]);
    let b94 = beta([0.0, 0.0, 0.42, 0.94]);
    let ok95 = within(b95, 0.898, 0.004);
    let ok94 = within(b94, 0.867, 0.005);
    Line {
        id: "4",
        title: "efficiency accounting",
        verdict: match (ok95, ok94) {
            (true, true) => Verdict::Pass,
            // The two targets disagree with each other under one accounting.
            (true, false) => Verdict::KnownFail,
            _ => Verdict::Fail,
        },
        detail: format!("beta(.42/.95) {b95:.4} (0.898 +- 0.004); beta(.42/.94) {b94:.4} (0.867 +- 0.005)"),
    }
}

fn c5_intercept_resend() -> Line {
    let op = OperatingPoint::link_25km();
    let t0 = Instant::now();
    let pulses = 1_000_000;
    let spec = BlockSpec {
        total_pulses: pulses + 2,
        test_pulses: 1,
        reveal_pulses: pulses,
        seed: 5,
    };
    let block = simkit::modulate_block(&spec, 0, &op.modulation).unwrap();
    let block = simkit::transmit_measure(block, &op.channel, &op.detector, AttackModel::InterceptResend, 6).unwrap();
    let pairs: Vec<(f64, f64)> = simkit::sift(&block)
        .unwrap()
        .iter()
        .filter(|p| p.revealed)
        .map(|p| (p.alice, p.bob))
        .collect();
    let est = estimate_params(&pairs, &op.detector, &op.modulation, 1.0, 7).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let r = secret_rates(&op.modulation, &est.conservative_channel(), &op.detector, op.rep_rate, op.beta, 0.0)
        .unwrap();
    let no_rate = r.delta_shannon_eff <= 0.0 && r.delta_holevo_eff <= 0.0;

    // The same attack end to end: the session must stop with no key.
    let mut cfg = SessionConfig::desk();
    cfg.attack = AttackModel::InterceptResend;
    cfg.blocks = 2;
    let (a, b) = run_loopback(&cfg, &cfg, b"acceptance");
    let (a, b) = (a.unwrap(), b.unwrap());
    let no_key = a.key_bits() == 0 && b.key_bits() == 0 && a.report.alarm.is_some();

    let ok = within(est.eps_hat, 2.0, 0.1)
        && entanglement_breaking(est.eps_hat, cfg.eb_delta)
        && no_rate
        && no_key
        && elapsed < 30.0;
    Line {
        id: "5",
        title: "intercept-resend",
        verdict: verdict(ok),
        detail: format!(
            "eps_hat {:.4} +- {:.4}; dI_eff {:.4}/{:.4}; session key {} bits, alarm {:?}; {elapsed:.1} s",
            est.eps_hat,
            est.eps_stderr,
            r.delta_shannon_eff,
            r.delta_holevo_eff,
            a.key_bits(),
            a.report.alarm.as_deref().unwrap_or("none")
        ),
    }
}

fn c6_estimation() -> Line {
    let op = OperatingPoint::link_25km();
    let spec = BlockSpec {
        total_pulses: 20_000,
        test_pulses: 5_000,
        reveal_pulses: 5_000,
        seed: 61,
    };
    let mut covered = 0;
    for id in 0..100 {
        let block = simkit::modulate_block(&spec, id, &op.modulation).unwrap();
        let block = simkit::transmit_measure(block, &op.channel, &op.detector, AttackModel::None, 62).unwrap();
        let pairs: Vec<(f64, f64)> = simkit::sift(&block)
            .unwrap()
            .iter()
            .filter(|p| p.revealed)
            .map(|p| (p.alice, p.bob))
            .collect();
        let est = estimate_params(&pairs, &op.detector, &op.modulation, 1.0, id as u64).unwrap();
        let t_ok = (est.t_hat - op.channel.transmission).abs() <= 3.0 * est.t_stderr;
        let e_ok = (est.eps_hat - op.channel.excess_noise).abs() <= 3.0 * est.eps_stderr;
        covered += (t_ok && e_ok) as usize;
    }
    Line {
        id: "6",
        title: "estimation consistency",
        verdict: verdict(covered >= 95),
        detail: format!("{covered}/100 blocks cover (T, eps) within 3 sigma"),
    }
}

fn c7_reconciliation() -> Line {
    let op = OperatingPoint::link_25km();
    let link = reference_link();
    let q = design_quantizer(&link, WidthRule::default()).unwrap().config;
    let spec = MultilevelSpec::desk();
    let codes = MultilevelCodes::build(spec).unwrap();
    let block = BlockSpec {
        total_pulses: spec.block_len + 2,
        test_pulses: 1,
        reveal_pulses: 1,
        seed: 71,
    };
    let frames = 200;
    let (mut success, mut undetected) = (0, 0);
    let t0 = Instant::now();
    for id in 0..frames {
        let sent = simkit::modulate_block(&block, id, &op.modulation).unwrap();
        let measured = simkit::transmit_measure(sent, &op.channel, &op.detector, AttackModel::None, 72).unwrap();
        let (alice, bob): (Vec<f64>, Vec<f64>) = simkit::sift(&measured)
            .unwrap()
            .iter()
            .filter(|p| !p.revealed)
            .map(|p| (p.alice, p.bob))
            .unzip();
        let labels = quantize(&q, &bob);
        let set = encode_syndromes(&labels, &codes, id).unwrap();
        let report = decode_multilevel(&alice, &set, &codes, &q, &link).unwrap();
        if let Some(got) = report.labels {
            if got == labels {
                success += 1;
            } else {
                undetected += 1;
            }
        }
    }
    let rate = success as f64 / frames as f64;
    Line {
        id: "7",
        title: "reconciliation, n = 10 000",
        verdict: match (rate >= 0.9, undetected == 0) {
            (true, true) => Verdict::Pass,
            (false, true) => Verdict::KnownFail,
            _ => Verdict::Fail,
        },
        detail: format!(
            "{success}/{frames} frames decoded ({:.1} %, target >= 90 %), {undetected} undetected errors; {:.1} s",
            100.0 * rate,
            t0.elapsed().as_secs_f64()
        ),
    }
}

fn c8_hashing() -> Line {
    let spec = HashSpec::standard();
    let ntt = Ntt::new(spec.prime, spec.ntt_len).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let rand_vec = |rng: &mut ChaCha8Rng, len: usize, p: u64| -> Vec<u64> { (0..len).map(|_| rng.random_range(0..p)).collect() };

    let roundtrip = (0..1000).all(|_| {
        let v = rand_vec(&mut rng, spec.ntt_len, spec.prime);
        let mut w = v.clone();
        ntt.forward(&mut w).unwrap();
        ntt.inverse(&mut w).unwrap();
        w == v
    });

    let via_ntt = |ntt: &Ntt, a: &[u64], b: &[u64]| {
        let p = ntt.modulus();
        let (mut fa, mut fb) = (a.to_vec(), b.to_vec());
        ntt.forward(&mut fa).unwrap();
        ntt.forward(&mut fb).unwrap();
        let mut c: Vec<u64> = fa.iter().zip(&fb).map(|(x, y)| x * y % p).collect();
        ntt.inverse(&mut c).unwrap();
        c
    };
    let full = (0..3).all(|_| {
        let a = rand_vec(&mut rng, spec.ntt_len, spec.prime);
        let b = rand_vec(&mut rng, spec.ntt_len, spec.prime);
        via_ntt(&ntt, &a, &b) == cyclic_convolution(&a, &b, spec.prime)
    });
    let small = Ntt::new(97, 16).unwrap();
    let reduced = (0..100).all(|_| {
        let a = rand_vec(&mut rng, 16, 97);
        let b = rand_vec(&mut rng, 16, 97);
        via_ntt(&small, &a, &b) == cyclic_convolution(&a, &b, 97)
    });

    let small_spec = HashSpec {
        prime: 97,
        ntt_len: 8,
        bits_per_element: 5,
        m: 7,
        trinomial_middle: 1,
    };
    let h = Hasher::new(small_spec).unwrap();

    // Stage 1: 2^10 input pairs x 10^3 seeds against (1 + k/p) 2^-k.
    let k = 8;
    let rand_bits = |rng: &mut ChaCha8Rng, n: usize| -> Vec<u8> { (0..n).map(|_| rng.random_range(0..2)).collect() };
    let mut pairs = Vec::new();
    while pairs.len() < 1024 {
        let (a, b) = (rand_bits(&mut rng, 40), rand_bits(&mut rng, 40));
        if a != b {
            pairs.push((a, b));
        }
    }
    let mut collisions = 0u64;
    for _ in 0..1000 {
        let seed = HashSeed::generate(h.spec(), &mut rng);
        for (a, b) in &pairs {
            collisions += (h.stage1(a, &seed.stage1, k).unwrap() == h.stage1(b, &seed.stage1, k).unwrap()) as u64;
        }
    }
    let trials = 1000.0 * pairs.len() as f64;
    let rate1 = collisions as f64 / trials;
    let bound1 = (1.0 + k as f64 / 97.0) * 2f64.powi(-(k as i32));
    let stage1_ok = rate1 <= bound1 + 3.0 * (bound1 * (1.0 - bound1) / trials).sqrt();

    // Stage 2: every distinct pair in GF(2^7), every non-zero seed, 3 output bits.
    let bits7 = |x: u64| (0..7).map(|i| ((x >> i) & 1) as u8).collect::<Vec<u8>>();
    let outputs: Vec<Vec<Vec<u8>>> = (1..128u64)
        .map(|s| (0..128u64).map(|x| h.stage2(&bits7(x), &[s], 3).unwrap()).collect())
        .collect();
    let mut worst = 0;
    for x in 0..128 {
        for y in x + 1..128 {
            worst = worst.max(outputs.iter().filter(|o| o[x] == o[y]).count());
        }
    }
    let stage2_ok = worst <= 1 << 4;

    Line {
        id: "8",
        title: "NTT / hash correctness",
        verdict: verdict(roundtrip && full && reduced && stage1_ok && stage2_ok),
        detail: format!(
            "roundtrip {roundtrip}, convolution full {full} reduced {reduced}; stage-1 collisions {rate1:.5} <= {bound1:.5}; stage-2 worst pair {worst}/16 seeds"
        ),
    }
}

fn c9_end_to_end() -> Line {
    let mut cfg = SessionConfig::desk();
    cfg.blocks = 40;
    let t0 = Instant::now();
    let (a, b) = run_loopback(&cfg, &cfg, b"acceptance");
    let (a, b) = (a.unwrap(), b.unwrap());
    let wall = t0.elapsed().as_secs_f64();
    let n = cfg.key_symbols() as f64;
    let lengths_ok = a
        .report
        .blocks
        .iter()
        .filter(|r| r.status == BlockStatus::Confirmed)
        .all(|r| {
            let want = (n * r.delta_i_eff.unwrap()).floor() as i64 - cfg.security_bits as i64 - 32;
            r.key_bits as i64 == want
        });
    let identical = a.keys == b.keys;
    let nonempty = a.key_bits() > 0;
    let rep = &a.report;
    Line {
        id: "9",
        title: "end to end (loopback)",
        verdict: verdict(identical && nonempty && lengths_ok),
        detail: format!(
            "{}/{} blocks confirmed, {} key bits, identical {identical}, lengths {lengths_ok}; projected {:.0} b/s at {:.0} Hz (reference ~2 kb/s), reconciliation {:.0} symbols/s (reference ~40 000); {wall:.0} s",
            rep.blocks_confirmed,
            rep.blocks_attempted,
            a.key_bits(),
            rep.projection.net_rate_bps,
            rep.projection.rep_rate_hz,
            rep.reconciliation_symbols_per_second.unwrap_or(0.0)
        ),
    }
}

fn c10_invariants() -> Line {
    let op = OperatingPoint::link_25km();
    let (mut symplectic, mut dominance, mut points) = (true, true, 0);
    for i in 0..40 {
        for j in 0..25 {
            let ch = ChannelModel {
                transmission: 0.01 + 0.99 * i as f64 / 39.0,
                excess_noise: 0.2 * j as f64 / 24.0,
            };
            points += 1;
            let h = holevo_bound(&op.modulation, &ch, &op.detector).unwrap();
            let [l1, l2, l3, l4, _] = h.eigenvalues;
            let rel = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
            symplectic &= rel(l1 * l1 + l2 * l2, h.a)
                && rel((l1 * l2).powi(2), h.b)
                && rel(l3 * l3 + l4 * l4, h.c)
                && rel((l3 * l4).powi(2), h.d);
            let r = secret_rates(&op.modulation, &ch, &op.detector, 1.0, 1.0, 0.0).unwrap();
            dominance &= r.chi_be >= r.i_be - 1e-12;
        }
    }

    let code = LdpcCode::build(10_000, 0.42, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let linear = (0..20).all(|_| {
        let a: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        let b: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
        let ab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let (sa, sb) = (code.syndrome(&a).unwrap(), code.syndrome(&b).unwrap());
        let xor: Vec<u8> = sa.iter().zip(&sb).map(|(x, y)| x ^ y).collect();
        code.syndrome(&ab).unwrap() == xor
    });

    let link = reference_link();
    let q = design_quantizer(&link, WidthRule::default()).unwrap().config;
    let prof = level_profiles(&q, &link).unwrap();
    let chain = within(prof.level_entropy.iter().sum::<f64>(), prof.entropy_q, 1e-9)
        && within(prof.conditional_entropy.iter().sum::<f64>(), prof.entropy_q - prof.info_xq, 1e-9);

    Line {
        id: "10",
        title: "invariant suites",
        verdict: verdict(symplectic && dominance && linear && chain),
        detail: format!(
            "symplectic {symplectic}, chi_BE >= I_BE on {points} points {dominance}, syndrome linearity {linear}, chain rule {chain}"
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [fn() -> Line; 10] = [
        c1_rates,
        c2_effective,
        c3_quantizer,
        c4_efficiency,
        c5_intercept_resend,
        c6_estimation,
        c7_reconciliation,
        c8_hashing,
        c9_end_to_end,
        c10_invariants,
    ];
    let mut unexpected = 0;
    for criterion in criteria {
        let line = criterion();
        let tag = match line.verdict {
            Verdict::Pass => "PASS",
            Verdict::KnownFail => "FAIL (known, see README)",
            Verdict::Fail => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {:>2} {:<28} {tag}: {}", line.id, line.title, line.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
