//! Arithmetic in GF(2^m) defined by a trinomial x^m + x^a + 1, on packed
//! 64-bit words (bit i of the element = coefficient of x^i).

use super::{PrivampError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrinomialField {
    m: usize,
    a: usize,
}

fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[inline]
fn get_bits(w: &[u64], pos: usize, width: usize) -> u64 {
    let (i, s) = (pos / 64, pos % 64);
    let mut x = w[i] >> s;
    if s > 0 && i + 1 < w.len() {
        x |= w[i + 1] << (64 - s);
    }
    if width < 64 {
        x &= (1u64 << width) - 1;
    }
    x
}

#[inline]
fn xor_bits(w: &mut [u64], pos: usize, x: u64) {
    let (i, s) = (pos / 64, pos % 64);
    w[i] ^= x << s;
    if s > 0 && i + 1 < w.len() {
        w[i + 1] ^= x >> (64 - s);
    }
}

fn spread(x: u32) -> u64 {
    let mut x = x as u64;
    x = (x | (x << 16)) & 0x0000_FFFF_0000_FFFF;
    x = (x | (x << 8)) & 0x00FF_00FF_00FF_00FF;
    x = (x | (x << 4)) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    (x | (x << 1)) & 0x5555_5555_5555_5555
}

impl TrinomialField {
    pub fn new(m: usize, a: usize) -> Result<Self> {
        if m < 2 || a == 0 || a >= m {
            return Err(PrivampError::InvalidParameter(format!(
                "x^{m} + x^{a} + 1 is not a valid trinomial"
            )));
        }
        Ok(TrinomialField { m, a })
    }

    pub fn degree(&self) -> usize {
        self.m
    }

    pub fn middle(&self) -> usize {
        self.a
    }

    pub fn words(&self) -> usize {
        words_for(self.m)
    }

    /// Reduces a polynomial of any degree, in place, and truncates it to
    /// `words()` words.
    fn reduce(&self, w: &mut Vec<u64>) {
        let (m, a) = (self.m, self.a);
        let chunk = (m - a).min(64);
        let mut top = w.len() * 64;
        while top > m {
            let lo = top.saturating_sub(chunk).max(m);
            let x = get_bits(w, lo, top - lo);
            if x != 0 {
                // Clear the chunk, then fold it down: x^lo = x^(lo−m)(x^a + 1).
                xor_bits(w, lo, x);
                xor_bits(w, lo - m, x);
                xor_bits(w, lo - m + a, x);
            }
            top = lo;
        }
        w.truncate(self.words());
        w.resize(self.words(), 0);
    }

    pub fn mul(&self, x: &[u64], y: &[u64]) -> Vec<u64> {
        let nw = self.words();
        debug_assert!(x.len() == nw && y.len() == nw);
        // 64 pre-shifted copies of y, so each set bit of x costs one XOR pass.
        let mut shifted = vec![vec![0u64; nw + 1]; 64];
        for (s, row) in shifted.iter_mut().enumerate() {
            for (i, &yw) in y.iter().enumerate() {
                row[i] ^= yw << s;
                if s > 0 {
                    row[i + 1] ^= yw >> (64 - s);
                }
            }
        }
        let mut prod = vec![0u64; 2 * nw + 1];
        for (i, &xw) in x.iter().enumerate() {
            let mut bits = xw;
            while bits != 0 {
                let s = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                for (d, &r) in prod[i..i + nw + 1].iter_mut().zip(&shifted[s]) {
                    *d ^= r;
                }
            }
        }
        self.reduce(&mut prod);
        prod
    }

    pub fn square(&self, x: &[u64]) -> Vec<u64> {
        let mut sq = Vec::with_capacity(2 * x.len());
        for &w in x {
            sq.push(spread(w as u32));
            sq.push(spread((w >> 32) as u32));
        }
        self.reduce(&mut sq);
        sq
    }

    /// Irreducibility for prime m: f has no root in GF(2) (true for every
    /// trinomial) and x^(2^m) ≡ x mod f.
    pub fn verify_irreducible(&self) -> Result<()> {
        if !super::ntt::is_prime(self.m as u64) {
            return Err(PrivampError::Verification(format!(
                "degree {} is not prime; irreducibility check unsupported",
                self.m
            )));
        }
        let mut x = vec![0u64; self.words()];
        x[0] = 2;
        let mut acc = x.clone();
        for _ in 0..self.m {
            acc = self.square(&acc);
        }
        if acc != x {
            return Err(PrivampError::Verification(format!(
                "x^{} + x^{} + 1 is reducible",
                self.m, self.a
            )));
        }
        Ok(())
    }

    /// Packs up to m bits (one per byte) into an element.
    pub fn from_bits(&self, bits: &[u8]) -> Result<Vec<u64>> {
        if bits.len() > self.m {
            return Err(PrivampError::SizeMismatch {
                expected: self.m,
                got: bits.len(),
            });
        }
        let mut w = vec![0u64; self.words()];
        for (i, &b) in bits.iter().enumerate() {
            w[i / 64] |= ((b & 1) as u64) << (i % 64);
        }
        Ok(w)
    }

    pub fn to_bits(&self, x: &[u64], count: usize) -> Vec<u8> {
        (0..count.min(self.m))
            .map(|i| ((x[i / 64] >> (i % 64)) & 1) as u8)
            .collect()
    }
}
