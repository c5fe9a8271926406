//! Channel parameter estimation from revealed data.
//!
//! Moment estimators only: the covariance between Alice's and Bob's revealed
//! values gives the overall gain `sqrt(η T)`, and Bob's variance the excess
//! noise once the trusted detector noise is removed. `η` and `v_el` are
//! calibration constants and are never estimated from channel data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rates::{ChannelModel, DetectorModel, Modulation};

/// Minimum sample count accepted by the estimators.
pub const MIN_SAMPLES: usize = 1_000;
/// Bootstrap resamples used for the excess-noise standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("shot-noise calibration failed: estimated level {0}")]
    Calibration(f64),
    #[error("estimation failed: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoiseEstimate {
    pub level: f64,
    pub stderr: f64,
    pub sample_count: usize,
}

/// Estimates the shot-noise scale from vacuum (zero-modulation) outcomes whose
/// variance is `N0 (1 + v_el)`.
pub fn calibrate_shot_noise(vacuum: &[f64], electronic_noise: f64) -> Result<ShotNoiseEstimate> {
    if vacuum.len() < MIN_SAMPLES {
        return Err(EstimationError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: vacuum.len(),
        });
    }
    let n = vacuum.len() as f64;
    let mean = vacuum.iter().sum::<f64>() / n;
    let var = vacuum.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let level = var / (1.0 + electronic_noise);
    if !(level > 0.0) || !level.is_finite() {
        return Err(EstimationError::Calibration(level));
    }
    Ok(ShotNoiseEstimate {
        level,
        stderr: level * (2.0 / (n - 1.0)).sqrt(),
        sample_count: vacuum.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub t_hat: f64,
    pub eps_hat: f64,
    pub shot_noise_hat: f64,
    pub sample_count: usize,
    pub t_stderr: f64,
    pub eps_stderr: f64,
    pub shot_noise_stderr: f64,
}

impl ParamEstimate {
    /// Channel to feed into rate computations: negative excess noise is
    /// floored at zero and the transmission capped at one.
    pub fn conservative_channel(&self) -> ChannelModel {
        ChannelModel {
            transmission: self.t_hat.min(1.0),
            excess_noise: self.eps_hat.max(0.0),
        }
    }

    pub const CSV_HEADER: &'static str = "block_id,t_hat,eps_hat,t_stderr,eps_stderr,samples";

    pub fn csv_row(&self, block_id: u32) -> String {
        format!(
            "{block_id},{},{},{},{},{}",
            self.t_hat, self.eps_hat, self.t_stderr, self.eps_stderr, self.sample_count
        )
    }
}

struct Moments {
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn moments(pairs: &[(f64, f64)], index: impl Iterator<Item = usize> + Clone) -> Moments {
    let n = index.clone().count() as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for i in index.clone() {
        sa += pairs[i].0;
        sb += pairs[i].1;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for i in index {
        let (a, b) = (pairs[i].0 - ma, pairs[i].1 - mb);
        vaa += a * a;
        vbb += b * b;
        vab += a * b;
    }
    let d = n - 1.0;
    Moments {
        var_a: vaa / d,
        var_b: vbb / d,
        cov: vab / d,
    }
}

// Bob's variance minus the part explained by Alice's *sample* variance; the
// nominal V_A would add Alice's own sampling spread (~4x the stderr).
fn excess_noise(m: &Moments, det: &DetectorModel, va: f64) -> (f64, f64) {
    let eta = det.efficiency;
    let t = m.cov * m.cov / (eta * va * va);
    let residual = m.var_b - m.cov * m.cov / m.var_a;
    let eps = (residual - 1.0 - det.electronic_noise) / (eta * t);
    (t, eps)
}

/// Estimates `(T, ε)` from revealed `(alice, bob)` pairs. Bob's values are
/// normalized by the calibrated shot noise first.
pub fn estimate_params(
    revealed: &[(f64, f64)],
    det: &DetectorModel,
    modulation: &Modulation,
    shot_noise: f64,
    bootstrap_seed: u64,
) -> Result<ParamEstimate> {
    if revealed.len() < MIN_SAMPLES {
        return Err(EstimationError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: revealed.len(),
        });
    }
    if !(shot_noise > 0.0) {
        return Err(EstimationError::Calibration(shot_noise));
    }
    let va = modulation.variance;
    if !(va > 0.0) {
        return Err(EstimationError::Degenerate("zero modulation variance".into()));
    }
    let scale = shot_noise.sqrt().recip();
    let pairs: Vec<(f64, f64)> = revealed.iter().map(|&(a, b)| (a, b * scale)).collect();
    let n = pairs.len();

    let m = moments(&pairs, 0..n);
    let (t_hat, eps_hat) = excess_noise(&m, det, va);
    if !(t_hat > 0.0) || !t_hat.is_finite() || !eps_hat.is_finite() {
        return Err(EstimationError::Degenerate(format!(
            "transmission estimate {t_hat}"
        )));
    }

    // Gaussian fourth moments: Var(ab) = Var(a) Var(b) + Cov(a,b)^2.
    let cov_se = ((m.var_a * m.var_b + m.cov * m.cov) / n as f64).sqrt();
    let t_stderr = 2.0 * m.cov.abs() * cov_se / (det.efficiency * va * va);

    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
    let mut draws = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut index = vec![0usize; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for slot in index.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let (_, eps) = excess_noise(&moments(&pairs, index.iter().copied()), det, va);
        if eps.is_finite() {
            draws.push(eps);
        }
    }
    let k = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / k;
    let eps_stderr = (draws.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();

    Ok(ParamEstimate {
        t_hat,
        eps_hat,
        shot_noise_hat: shot_noise,
        sample_count: n,
        t_stderr,
        eps_stderr,
        shot_noise_stderr: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionEstimate {
    pub t_hat: f64,
    pub stderr: f64,
    pub sample_count: usize,
}

/// Estimates `T` from test pulses of known displacement: `known` is the
/// agreed value on the quadrature Bob measured.
pub fn estimate_transmission_from_tests(
    tests: &[(f64, f64)],
    det: &DetectorModel,
    shot_noise: f64,
) -> Result<TransmissionEstimate> {
    if tests.len() < MIN_SAMPLES {
        return Err(EstimationError::TooFewSamples {
            needed: MIN_SAMPLES,
            got: tests.len(),
        });
    }
    let scale = shot_noise.sqrt().recip();
    let saa: f64 = tests.iter().map(|(a, _)| a * a).sum();
    if !(saa > 0.0) {
        return Err(EstimationError::Degenerate("test pulses carry no amplitude".into()));
    }
    let sab: f64 = tests.iter().map(|(a, b)| a * b * scale).sum();
    let gain = sab / saa;
    let resid = tests
        .iter()
        .map(|(a, b)| (b * scale - gain * a).powi(2))
        .sum::<f64>()
        / (tests.len() as f64 - 1.0);
    let gain_se = (resid / saa).sqrt();
    let t_hat = gain * gain / det.efficiency;
    if !(t_hat > 0.0) {
        return Err(EstimationError::Degenerate(format!("transmission estimate {t_hat}")));
    }
    Ok(TransmissionEstimate {
        t_hat,
        stderr: 2.0 * gain.abs() * gain_se / det.efficiency,
        sample_count: tests.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CrossCheck {
    Ok,
    /// The two transmission estimates disagree by this many combined σ.
    Alarm { deviation_sigmas: f64 },
}

impl CrossCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, CrossCheck::Ok)
    }
}

/// Compares two transmission estimates `(t, stderr)`.
pub fn cross_check(test: (f64, f64), subset: (f64, f64), tolerance_sigmas: f64) -> CrossCheck {
    let diff = (test.0 - subset.0).abs();
    let sigma = test.1.hypot(subset.1);
    if diff == 0.0 {
        return CrossCheck::Ok;
    }
    let dev = if sigma > 0.0 { diff / sigma } else { f64::INFINITY };
    if dev <= tolerance_sigmas {
        CrossCheck::Ok
    } else {
        CrossCheck::Alarm {
            deviation_sigmas: dev,
        }
    }
}

/// Local-oscillator monitoring: relative deviation from nominal allowed.
pub const LO_TOLERANCE: f64 = 0.01;

pub fn lo_within_tolerance(lo_level: f64, tolerance: f64) -> bool {
    (lo_level - 1.0).abs() <= tolerance
}

/// True when the estimated excess noise reaches the entanglement-breaking
/// level `2 (1 - δ)` that an intercept-resend attack produces.
pub fn entanglement_breaking(eps_hat: f64, delta: f64) -> bool {
    eps_hat >= 2.0 * (1.0 - delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::OperatingPoint;
    use crate::simkit::{self, AttackModel, BlockSpec, PulseRole};
    use rand_distr::StandardNormal;

    fn normal_samples(n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn simulated_reveal(reveal: usize, attack: AttackModel, block: u32) -> Vec<(f64, f64)> {
        let op = OperatingPoint::link_25km();
        let spec = BlockSpec {
            total_pulses: reveal + 2,
            test_pulses: 1,
            reveal_pulses: reveal,
            seed: 99,
        };
        let b = simkit::modulate_block(&spec, block, &op.modulation).unwrap();
        let b = simkit::transmit_measure(b, &op.channel, &op.detector, attack, 17).unwrap();
        simkit::sift(&b)
            .unwrap()
            .into_iter()
            .filter(|p| p.revealed)
            .map(|p| (p.alice, p.bob))
            .collect()
    }

    #[test]
    fn shot_noise_calibration() {
        let samples = normal_samples(1_000_000, 1.041f64.sqrt(), 1);
        let est = calibrate_shot_noise(&samples, 0.041).unwrap();
        assert_close!(est.level, 1.0, 0.005);

        let scaled: Vec<f64> = samples.iter().map(|x| 2.0 * x).collect();
        let est4 = calibrate_shot_noise(&scaled, 0.041).unwrap();
        assert_close!(est4.level, 4.0 * est.level, 1e-9);

        assert!(matches!(
            calibrate_shot_noise(&vec![0.0; 2000], 0.041),
            Err(EstimationError::Calibration(_))
        ));
        assert!(matches!(
            calibrate_shot_noise(&samples[..10], 0.041),
            Err(EstimationError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn nominal_parameters_recovered() {
        let op = OperatingPoint::link_25km();
        let pairs = simulated_reveal(5_000, AttackModel::None, 0);
        let est = estimate_params(&pairs, &op.detector, &op.modulation, 1.0, 1).unwrap();
        assert!((est.t_hat - 0.302).abs() <= 3.0 * est.t_stderr, "{est:?}");
        assert!((est.eps_hat - 0.005).abs() <= 3.0 * est.eps_stderr, "{est:?}");
        assert_close!(est.t_stderr, 0.013, 0.003);
        assert_close!(est.eps_stderr, 0.11, 0.03);
    }

    #[test]
    fn identity_channel_with_shot_noise() {
        let a = normal_samples(20_000, 1.0, 2);
        let z = normal_samples(20_000, 1.0, 3);
        let pairs: Vec<_> = a.iter().zip(&z).map(|(a, z)| (*a, a + z)).collect();
        let est = estimate_params(&pairs, &DetectorModel::ideal(), &Modulation { variance: 1.0 }, 1.0, 4).unwrap();
        assert!((est.t_hat - 1.0).abs() <= 3.0 * est.t_stderr, "{est:?}");
        assert!(est.eps_hat.abs() <= 3.0 * est.eps_stderr, "{est:?}");
    }

    #[test]
    fn intercept_resend_detected() {
        let op = OperatingPoint::link_25km();
        let pairs = simulated_reveal(1_000_000, AttackModel::InterceptResend, 1);
        let est = estimate_params(&pairs, &op.detector, &op.modulation, 1.0, 1).unwrap();
        assert_close!(est.eps_hat, 2.0, 0.1);
        assert!((est.t_hat - 0.302).abs() <= 3.0 * est.t_stderr);
        assert!(entanglement_breaking(est.eps_hat, 0.05));
    }

    #[test]
    fn reordering_does_not_change_point_estimates() {
        let op = OperatingPoint::link_25km();
        let pairs = simulated_reveal(5_000, AttackModel::None, 2);
        let mut reversed = pairs.clone();
        reversed.reverse();
        let a = estimate_params(&pairs, &op.detector, &op.modulation, 1.0, 1).unwrap();
        let b = estimate_params(&reversed, &op.detector, &op.modulation, 1.0, 1).unwrap();
        assert_close!(a.t_hat, b.t_hat, 1e-12);
        assert_close!(a.eps_hat, b.eps_hat, 1e-10);
    }

    #[test]
    fn errors() {
        let op = OperatingPoint::link_25km();
        let few = vec![(1.0, 1.0); 10];
        assert!(matches!(
            estimate_params(&few, &op.detector, &op.modulation, 1.0, 0),
            Err(EstimationError::TooFewSamples { .. })
        ));
        let uncorrelated: Vec<(f64, f64)> = normal_samples(2000, 1.0, 5)
            .into_iter()
            .map(|b| (0.0, b))
            .collect();
        assert!(estimate_params(&uncorrelated, &op.detector, &op.modulation, 1.0, 0).is_err());
    }

    #[test]
    fn test_pulse_transmission() {
        let op = OperatingPoint::link_25km();
        let spec = BlockSpec::default();
        let b = simkit::modulate_block(&spec, 0, &op.modulation).unwrap();
        let b = simkit::transmit_measure(b, &op.channel, &op.detector, AttackModel::None, 3).unwrap();
        let tests: Vec<_> = b
            .pulses
            .iter()
            .filter(|p| p.role == PulseRole::Test)
            .map(|p| {
                let q = p.quadrature.unwrap();
                (p.alice_on(q), p.bob_outcome.unwrap())
            })
            .collect();
        let est = estimate_transmission_from_tests(&tests, &op.detector, 1.0).unwrap();
        assert!((est.t_hat - 0.302).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn cross_check_cases() {
        assert!(cross_check((0.3, 0.01), (0.3, 0.01), 3.0).is_ok());
        assert!(!cross_check((0.3, 0.005), (0.15, 0.005), 3.0).is_ok());
        assert!(cross_check((0.30, 0.01), (0.32, 0.01), 3.0).is_ok());
    }

    #[test]
    fn lo_monitoring() {
        assert!(lo_within_tolerance(1.0, LO_TOLERANCE));
        assert!(lo_within_tolerance(1.005, LO_TOLERANCE));
        assert!(!lo_within_tolerance(0.95, LO_TOLERANCE));
    }
}
