//! Number theoretic transform over GF(p) for power-of-two lengths.

use super::{PrivampError, Result};

#[inline]
fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    a * b % p
}

pub fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Deterministic trial division; moduli here are below 2^32.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// A verified transform of length `len` modulo the prime `p`.
#[derive(Debug, Clone)]
pub struct Ntt {
    p: u64,
    len: usize,
    root: u64,
    root_inv: u64,
    len_inv: u64,
}

impl Ntt {
    /// Checks that `p` is prime, that `len` is a power of two dividing
    /// p − 1, and that the derived root has order exactly `len`.
    pub fn new(p: u64, len: usize) -> Result<Self> {
        if p >= 1 << 32 {
            return Err(PrivampError::InvalidParameter(format!("modulus {p} exceeds 32 bits")));
        }
        if !is_prime(p) {
            return Err(PrivampError::Verification(format!("{p} is not prime")));
        }
        if len < 2 || !len.is_power_of_two() || (p - 1) % len as u64 != 0 {
            return Err(PrivampError::InvalidParameter(format!(
                "length {len} is not a power of two dividing {}",
                p - 1
            )));
        }
        let factors = prime_factors(p - 1);
        let g = (2..p)
            .find(|&g| factors.iter().all(|&q| pow_mod(g, (p - 1) / q, p) != 1))
            .ok_or_else(|| PrivampError::Verification(format!("no generator mod {p}")))?;
        let root = pow_mod(g, (p - 1) / len as u64, p);
        if pow_mod(root, len as u64, p) != 1 || pow_mod(root, len as u64 / 2, p) == 1 {
            return Err(PrivampError::Verification(format!("root {root} does not have order {len}")));
        }
        Ok(Ntt {
            p,
            len,
            root,
            root_inv: pow_mod(root, p - 2, p),
            len_inv: pow_mod(len as u64, p - 2, p),
        })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Primitive `len`-th root of unity used by the forward transform.
    pub fn root(&self) -> u64 {
        self.root
    }

    fn check(&self, v: &[u64]) -> Result<()> {
        if v.len() != self.len {
            return Err(PrivampError::SizeMismatch {
                expected: self.len,
                got: v.len(),
            });
        }
        if let Some(&x) = v.iter().find(|&&x| x >= self.p) {
            return Err(PrivampError::InvalidParameter(format!(
                "element {x} outside [0, {})",
                self.p
            )));
        }
        Ok(())
    }

    fn transform(&self, v: &mut [u64], root: u64) {
        let (n, p) = (self.len, self.p);
        let mut j = 0;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                v.swap(i, j);
            }
        }
        let mut half = 1;
        while half < n {
            let step = pow_mod(root, (n / (2 * half)) as u64, p);
            for start in (0..n).step_by(2 * half) {
                let mut w = 1;
                for k in start..start + half {
                    let t = mul_mod(v[k + half], w, p);
                    let u = v[k];
                    v[k] = if u + t >= p { u + t - p } else { u + t };
                    v[k + half] = if u >= t { u - t } else { u + p - t };
                    w = mul_mod(w, step, p);
                }
            }
            half *= 2;
        }
    }

    /// `V_j = Σ_i v_i ω^{ij}`.
    pub fn forward(&self, v: &mut [u64]) -> Result<()> {
        self.check(v)?;
        self.transform(v, self.root);
        Ok(())
    }

    /// `v_i = L⁻¹ Σ_j V_j ω^{-ij}`.
    pub fn inverse(&self, v: &mut [u64]) -> Result<()> {
        self.check(v)?;
        self.transform(v, self.root_inv);
        for x in v.iter_mut() {
            *x = mul_mod(*x, self.len_inv, self.p);
        }
        Ok(())
    }
}

/// Schoolbook cyclic convolution, the reference for the transform route.
pub fn cyclic_convolution(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
    let n = a.len();
    assert_eq!(n, b.len());
    (0..n)
        .map(|k| {
            let mut acc: u128 = 0;
            for i in 0..n {
                acc += a[i] as u128 * b[(k + n - i) % n] as u128;
            }
            (acc % p as u128) as u64
        })
        .collect()
}
