//! Shortened binary BCH code used as the outer code.
//!
//! Codeword layout: parity bit `i` sits at position `i`, payload bit `k` at
//! position `r + k`, with `r` the generator degree.

use std::sync::Arc;

use super::gf2m::Gf2m;
use super::{ReconError, Result};

/// Smallest parent field considered.
pub const MIN_FIELD_DEGREE: u32 = 16;

#[derive(Debug, Clone)]
pub struct BchCode {
    field: Arc<Gf2m>,
    t: usize,
    payload_len: usize,
    /// Generator coefficients, index = power of x; `generator[r] == 1`.
    generator: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BchOutcome {
    Clean,
    Corrected(usize),
    /// More errors than the code can locate.
    Failure,
}

impl BchCode {
    /// Strongest code over the smallest adequate field (at least GF(2^16))
    /// whose parity fits in `max_parity` bits.
    pub fn for_payload(payload_len: usize, max_parity: usize) -> Result<Self> {
        let mut m = MIN_FIELD_DEGREE;
        while (1usize << m) - 1 < payload_len + max_parity {
            m += 1;
        }
        let field = Arc::new(Gf2m::new(m)?);
        let mut best = None;
        let mut t = 1;
        loop {
            let g = generator(&field, t);
            if g.len() - 1 > max_parity {
                break;
            }
            best = Some((t, g));
            t += 1;
        }
        let (t, generator) = best.ok_or_else(|| {
            ReconError::Construction(format!("parity budget {max_parity} below field degree {m}"))
        })?;
        Ok(BchCode {
            field,
            t,
            payload_len,
            generator,
        })
    }

    pub fn with_params(m: u32, t: usize, payload_len: usize) -> Result<Self> {
        if t == 0 {
            return Err(ReconError::InvalidParameter("t = 0".into()));
        }
        let field = Arc::new(Gf2m::new(m)?);
        let generator = generator(&field, t);
        if payload_len + generator.len() - 1 > field.order() {
            return Err(ReconError::Construction(format!(
                "payload {payload_len} too long for GF(2^{m})"
            )));
        }
        Ok(BchCode {
            field,
            t,
            payload_len,
            generator,
        })
    }

    pub fn field_degree(&self) -> u32 {
        self.field.m()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    pub fn parity_len(&self) -> usize {
        self.generator.len() - 1
    }

    pub fn rate(&self) -> f64 {
        self.payload_len as f64 / (self.payload_len + self.parity_len()) as f64
    }

    /// Systematic parity bits of `payload`.
    pub fn parity(&self, payload: &[u8]) -> Result<Vec<u8>> {
        if payload.len() != self.payload_len {
            return Err(ReconError::SizeMismatch {
                expected: self.payload_len,
                got: payload.len(),
            });
        }
        let r = self.parity_len();
        let words = r.div_ceil(64);
        let mut g = vec![0u64; words];
        for (i, &c) in self.generator[..r].iter().enumerate() {
            g[i / 64] |= (c as u64) << (i % 64);
        }
        let top = r - 1;
        let last_mask = if r % 64 == 0 { u64::MAX } else { (1u64 << (r % 64)) - 1 };
        let mut reg = vec![0u64; words];
        for &bit in payload.iter().rev() {
            let fb = (bit & 1) as u64 ^ ((reg[top / 64] >> (top % 64)) & 1);
            let mut carry = 0;
            for w in reg.iter_mut() {
                let next = *w >> 63;
                *w = (*w << 1) | carry;
                carry = next;
            }
            reg[words - 1] &= last_mask;
            if fb == 1 {
                for (w, gw) in reg.iter_mut().zip(&g) {
                    *w ^= gw;
                }
            }
        }
        Ok((0..r).map(|i| ((reg[i / 64] >> (i % 64)) & 1) as u8).collect())
    }

    fn syndromes(&self, payload: &[u8], parity: &[u8]) -> Vec<u32> {
        let f = &*self.field;
        let n = f.order();
        let r = self.parity_len();
        let mut s = vec![0u32; 2 * self.t + 1];
        let positions = parity
            .iter()
            .enumerate()
            .chain(payload.iter().enumerate().map(|(k, b)| (k + r, b)))
            .filter(|(_, &b)| b & 1 == 1)
            .map(|(p, _)| p);
        for p in positions {
            for j in (1..=2 * self.t).step_by(2) {
                s[j] ^= f.alpha_pow((j * p) % n);
            }
        }
        for j in 1..=self.t {
            s[2 * j] = f.square(s[j]);
        }
        s
    }

    /// True when payload and parity form a codeword.
    pub fn check(&self, payload: &[u8], parity: &[u8]) -> bool {
        self.syndromes(payload, parity).iter().all(|&x| x == 0)
    }

    /// Corrects up to `t` errors in place across payload and parity.
    pub fn decode(&self, payload: &mut [u8], parity: &mut [u8]) -> Result<BchOutcome> {
        if payload.len() != self.payload_len || parity.len() != self.parity_len() {
            return Err(ReconError::SizeMismatch {
                expected: self.payload_len + self.parity_len(),
                got: payload.len() + parity.len(),
            });
        }
        let s = self.syndromes(payload, parity);
        if s.iter().all(|&x| x == 0) {
            return Ok(BchOutcome::Clean);
        }
        let lambda = self.berlekamp_massey(&s);
        let degree = lambda.len() - 1;
        if degree > self.t {
            return Ok(BchOutcome::Failure);
        }
        let f = &*self.field;
        let n = f.order();
        let r = self.parity_len();
        let len = r + self.payload_len;
        // Chien search over the shortened positions: error at p ⇔ Λ(α^−p) = 0.
        let mut terms = lambda.clone();
        let steps: Vec<u32> = (0..=degree).map(|i| f.alpha_pow((n - i % n) % n)).collect();
        let mut roots = Vec::new();
        for p in 0..len {
            if terms.iter().fold(0, |a, &x| a ^ x) == 0 {
                roots.push(p);
                if roots.len() > degree {
                    break;
                }
            }
            for (t, &st) in terms.iter_mut().zip(&steps) {
                *t = f.mul(*t, st);
            }
        }
        if roots.len() != degree {
            return Ok(BchOutcome::Failure);
        }
        for &p in &roots {
            if p < r {
                parity[p] ^= 1;
            } else {
                payload[p - r] ^= 1;
            }
        }
        Ok(BchOutcome::Corrected(degree))
    }

    fn berlekamp_massey(&self, s: &[u32]) -> Vec<u32> {
        let f = &*self.field;
        let mut c = vec![1u32];
        let mut b = vec![1u32];
        let mut l = 0usize;
        let mut shift = 1usize;
        let mut last = 1u32;
        for k in 0..2 * self.t {
            let mut d = s[k + 1];
            for i in 1..=l.min(c.len() - 1) {
                d ^= f.mul(c[i], s[k + 1 - i]);
            }
            if d == 0 {
                shift += 1;
                continue;
            }
            let coef = f.mul(d, f.inv(last).unwrap_or(0));
            let prev = c.clone();
            if c.len() < b.len() + shift {
                c.resize(b.len() + shift, 0);
            }
            for (i, &bi) in b.iter().enumerate() {
                c[i + shift] ^= f.mul(coef, bi);
            }
            if 2 * l <= k {
                l = k + 1 - l;
                b = prev;
                last = d;
                shift = 1;
            } else {
                shift += 1;
            }
        }
        while c.len() > 1 && *c.last().unwrap_or(&1) == 0 {
            c.pop();
        }
        c
    }
}

/// lcm of the minimal polynomials of α, α^3, …, α^(2t−1).
fn generator(field: &Gf2m, t: usize) -> Vec<u8> {
    let n = field.order();
    let mut covered = vec![false; n];
    let mut g: Vec<u8> = vec![1];
    for i in (1..2 * t).step_by(2) {
        let i = i % n;
        if covered[i] {
            continue;
        }
        // Conjugacy class of i and its minimal polynomial ∏ (x + α^c).
        let mut poly: Vec<u32> = vec![1];
        let mut c = i;
        loop {
            covered[c] = true;
            let root = field.alpha_pow(c);
            let mut next = vec![0u32; poly.len() + 1];
            for (k, &a) in poly.iter().enumerate() {
                next[k + 1] ^= a;
                next[k] ^= field.mul(a, root);
            }
            poly = next;
            c = (2 * c) % n;
            if c == i {
                break;
            }
        }
        debug_assert!(poly.iter().all(|&a| a <= 1));
        let mut prod = vec![0u8; g.len() + poly.len() - 1];
        for (a, &ga) in g.iter().enumerate() {
            if ga == 0 {
                continue;
            }
            for (b, &pb) in poly.iter().enumerate() {
                prod[a + b] ^= pb as u8;
            }
        }
        g = prod;
    }
    g
}
