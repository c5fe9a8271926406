//! Table-driven arithmetic in GF(2^m), 2 ≤ m ≤ 20.

use super::{ReconError, Result};

// Primitive polynomials, bit i = coefficient of x^i.
const PRIMITIVE: [(u32, u32); 19] = [
    (2, 0b111),
    (3, 0b1011),
    (4, 0b1_0011),
    (5, 0b10_0101),
    (6, 0b100_0011),
    (7, 0b1000_0011),
    (8, 0x11D),
    (9, 0x211),
    (10, 0x409),
    (11, 0x805),
    (12, 0x1053),
    (13, 0x201B),
    (14, 0x4443),
    (15, 0x8003),
    (16, 0x1100B),
    (17, 0x20009),
    (18, 0x40081),
    (19, 0x80027),
    (20, 0x100009),
];

#[derive(Debug, Clone)]
pub struct Gf2m {
    m: u32,
    poly: u32,
    exp: Vec<u32>,
    log: Vec<u32>,
}

impl Gf2m {
    /// Builds the field and checks that the stored polynomial really is
    /// primitive (α has order 2^m − 1).
    pub fn new(m: u32) -> Result<Self> {
        let poly = PRIMITIVE
            .iter()
            .find(|(d, _)| *d == m)
            .map(|(_, p)| *p)
            .ok_or_else(|| ReconError::InvalidParameter(format!("GF(2^{m}) unsupported")))?;
        let order = (1usize << m) - 1;
        let mut exp = vec![0u32; 2 * order];
        let mut log = vec![0u32; order + 1];
        let mut x = 1u32;
        for i in 0..order {
            if i > 0 && x == 1 {
                return Err(ReconError::Construction(format!(
                    "polynomial {poly:#x} is not primitive"
                )));
            }
            exp[i] = x;
            log[x as usize] = i as u32;
            x <<= 1;
            if x >> m != 0 {
                x ^= poly;
            }
        }
        if x != 1 {
            return Err(ReconError::Construction(format!(
                "polynomial {poly:#x} is not primitive"
            )));
        }
        for i in order..2 * order {
            exp[i] = exp[i - order];
        }
        Ok(Gf2m { m, poly, exp, log })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn poly(&self) -> u32 {
        self.poly
    }

    /// Multiplicative order of α, 2^m − 1.
    pub fn order(&self) -> usize {
        (1usize << self.m) - 1
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[(self.log[a as usize] + self.log[b as usize]) as usize]
        }
    }

    #[inline]
    pub fn alpha_pow(&self, e: usize) -> u32 {
        self.exp[e % self.order()]
    }

    #[inline]
    pub fn log(&self, a: u32) -> Option<usize> {
        (a != 0).then(|| self.log[a as usize] as usize)
    }

    pub fn inv(&self, a: u32) -> Option<u32> {
        self.log(a).map(|l| self.exp[(self.order() - l) % self.order()])
    }

    pub fn square(&self, a: u32) -> u32 {
        self.mul(a, a)
    }
}
