//! Syndrome-conditioned Sum-Product decoding in fixed point.
//!
//! Messages are integers in units of 1/`LLR_SCALE` nat. Check updates use
//! the exact box-plus with `ln(1 + e^-x)` looked up in a table, and checks
//! are processed serially (layered schedule), which roughly halves the
//! iteration count of the flooding schedule.

use super::ldpc::LdpcCode;
use super::{ReconError, Result};

/// Fixed-point units per nat.
pub const LLR_SCALE: i32 = 16;
/// Saturation level of every message (≈ 62 nat).
pub const LLR_MAX: i32 = 1000;
const TABLE_LEN: usize = 8 * LLR_SCALE as usize + 1;

#[derive(Debug, Clone)]
pub struct SumProduct {
    table: [i32; TABLE_LEN],
    pub max_iterations: usize,
}

/// Check-to-variable messages, kept between calls so that decoding can be
/// resumed after the channel priors change.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    msg: Vec<i32>,
}

impl DecoderState {
    pub fn new(code: &LdpcCode) -> Self {
        DecoderState {
            msg: vec![0; code.edges()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub bits: Vec<u8>,
    /// Posterior LLRs (fixed point), positive favouring 0.
    pub posterior: Vec<i32>,
    pub converged: bool,
    pub iterations: usize,
}

impl Default for SumProduct {
    fn default() -> Self {
        Self::new(200)
    }
}

impl SumProduct {
    pub fn new(max_iterations: usize) -> Self {
        let mut table = [0; TABLE_LEN];
        for (k, t) in table.iter_mut().enumerate() {
            let x = k as f64 / LLR_SCALE as f64;
            *t = ((-x).exp().ln_1p() * LLR_SCALE as f64).round() as i32;
        }
        SumProduct {
            table,
            max_iterations,
        }
    }

    #[inline]
    fn correction(&self, x: i32) -> i32 {
        let x = x.unsigned_abs() as usize;
        if x < TABLE_LEN {
            self.table[x]
        } else {
            0
        }
    }

    #[inline]
    pub fn boxplus(&self, a: i32, b: i32) -> i32 {
        let m = a.abs().min(b.abs());
        let s = if (a ^ b) < 0 { -m } else { m };
        s + self.correction(a + b) - self.correction(a - b)
    }

    /// Converts a floating LLR (nats) to fixed point with saturation.
    pub fn quantize_llr(llr: f64) -> i32 {
        let v = (llr * LLR_SCALE as f64).round();
        v.clamp(-LLR_MAX as f64, LLR_MAX as f64) as i32
    }

    /// Decodes from scratch with the full iteration budget.
    pub fn decode(&self, code: &LdpcCode, syndrome: &[u8], prior: &[i32]) -> Result<DecodeOutcome> {
        let mut state = DecoderState::new(code);
        self.resume(code, syndrome, prior, &mut state, self.max_iterations)
    }

    /// Runs up to `iterations` layered iterations starting from `state`.
    /// The posterior is rebuilt as `prior + Σ messages`, so `prior` may differ
    /// from the previous call; `posterior − prior` is then the extrinsic
    /// output.
    pub fn resume(
        &self,
        code: &LdpcCode,
        syndrome: &[u8],
        prior: &[i32],
        state: &mut DecoderState,
        iterations: usize,
    ) -> Result<DecodeOutcome> {
        if state.msg.len() != code.edges() {
            return Err(ReconError::SizeMismatch {
                expected: code.edges(),
                got: state.msg.len(),
            });
        }
        if syndrome.len() != code.m() {
            return Err(ReconError::SizeMismatch {
                expected: code.m(),
                got: syndrome.len(),
            });
        }
        if prior.len() != code.n() {
            return Err(ReconError::SizeMismatch {
                expected: code.n(),
                got: prior.len(),
            });
        }
        let ptr = code.check_ptr();
        let vars = code.check_vars();
        let msg = &mut state.msg;
        let mut post: Vec<i32> = prior.to_vec();
        for (e, &v) in vars.iter().enumerate() {
            post[v as usize] += msg[e];
        }
        for p in post.iter_mut() {
            *p = (*p).clamp(-LLR_MAX, LLR_MAX);
        }
        let max_deg = (0..code.m())
            .map(|c| (ptr[c + 1] - ptr[c]) as usize)
            .max()
            .unwrap_or(0);
        let mut q = vec![0i32; max_deg];
        let mut fwd = vec![0i32; max_deg];
        let mut bits = vec![0u8; code.n()];

        let hard = |post: &[i32], bits: &mut [u8]| {
            for (b, &p) in bits.iter_mut().zip(post) {
                *b = (p < 0) as u8;
            }
        };
        let satisfied = |bits: &[u8]| {
            (0..code.m()).all(|c| {
                vars[ptr[c] as usize..ptr[c + 1] as usize]
                    .iter()
                    .fold(syndrome[c] & 1, |a, &v| a ^ bits[v as usize])
                    == 0
            })
        };

        for it in 1..=iterations {
            for c in 0..code.m() {
                let (lo, hi) = (ptr[c] as usize, ptr[c + 1] as usize);
                let d = hi - lo;
                for k in 0..d {
                    let v = vars[lo + k] as usize;
                    q[k] = (post[v] - msg[lo + k]).clamp(-LLR_MAX, LLR_MAX);
                }
                fwd[0] = q[0];
                for k in 1..d {
                    fwd[k] = self.boxplus(fwd[k - 1], q[k]);
                }
                let flip = syndrome[c] & 1 == 1;
                let mut bwd = 0i32;
                for k in (0..d).rev() {
                    let ext = match (k == 0, k == d - 1) {
                        (true, true) => LLR_MAX,
                        (true, false) => bwd,
                        (false, true) => fwd[k - 1],
                        (false, false) => self.boxplus(fwd[k - 1], bwd),
                    };
                    let ext = if flip { -ext } else { ext };
                    bwd = if k == d - 1 { q[k] } else { self.boxplus(bwd, q[k]) };
                    let v = vars[lo + k] as usize;
                    msg[lo + k] = ext;
                    post[v] = (q[k] + ext).clamp(-LLR_MAX, LLR_MAX);
                }
            }
            hard(&post, &mut bits);
            if satisfied(&bits) {
                return Ok(DecodeOutcome {
                    bits,
                    posterior: post,
                    converged: true,
                    iterations: it,
                });
            }
        }
        Ok(DecodeOutcome {
            bits,
            posterior: post,
            converged: false,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn boxplus_matches_float() {
        let spa = SumProduct::new(1);
        let exact = |a: f64, b: f64| 2.0 * ((a / 2.0).tanh() * (b / 2.0).tanh()).atanh();
        for &(a, b) in &[(1.0, 2.0), (-3.0, 0.5), (5.0, -5.0), (0.2, 0.3), (10.0, 12.0)] {
            let got = spa.boxplus(SumProduct::quantize_llr(a), SumProduct::quantize_llr(b));
            assert_close!(got as f64 / LLR_SCALE as f64, exact(a, b), 0.15);
        }
        assert_eq!(spa.boxplus(0, 500), 0);
    }

    #[test]
    fn noiseless_converges_in_one_iteration() {
        let code = LdpcCode::build(2000, 0.42, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bits: Vec<u8> = (0..2000).map(|_| rng.random_range(0..2)).collect();
        let syn = code.syndrome(&bits).unwrap();
        let prior: Vec<i32> = bits.iter().map(|&b| if b == 0 { 400 } else { -400 }).collect();
        let out = SumProduct::default().decode(&code, &syn, &prior).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.bits, bits);
    }

    /// BIAWGN with σ such that capacity leaves a clear margin over the rate.
    #[test]
    fn decodes_awgn_below_threshold() {
        let n = 10_000;
        let code = LdpcCode::build(n, 0.42, 2).unwrap();
        let spa = SumProduct::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sigma: f64 = 0.85; // capacity ≈ 0.6
        let mut ok = 0;
        for _ in 0..10 {
            let bits: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let syn = code.syndrome(&bits).unwrap();
            let prior: Vec<i32> = bits
                .iter()
                .map(|&b| {
                    let x = if b == 0 { 1.0 } else { -1.0 };
                    let y = x + sigma * rng.sample::<f64, _>(StandardNormal);
                    SumProduct::quantize_llr(2.0 * y / (sigma * sigma))
                })
                .collect();
            let out = spa.decode(&code, &syn, &prior).unwrap();
            if out.converged {
                assert_eq!(out.bits, bits);
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10");
    }

    #[test]
    fn size_checks() {
        let code = LdpcCode::build(1000, 0.5, 1).unwrap();
        let spa = SumProduct::default();
        assert!(spa.decode(&code, &[0; 3], &[0; 1000]).is_err());
        assert!(spa.decode(&code, &vec![0; 500], &[0; 3]).is_err());
    }
}
