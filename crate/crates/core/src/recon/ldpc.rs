//! LDPC parity-check matrices: progressive-edge-growth construction,
//! structural audit and a plain-text file format.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ReconError, Result};

/// Variable-node degree distribution (node perspective).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeProfile {
    pub id: String,
    /// `(degree, fraction of variable nodes)`.
    pub var_degrees: Vec<(usize, f64)>,
}

impl DegreeProfile {
    /// Fixed table by rate. Low rates use an irregular 2/3/8 profile; high
    /// rates a mostly-3 profile, since at short lengths the heavy check
    /// degrees leave no room for larger variable degrees without 4-cycles.
    pub fn for_rate(rate: f64) -> DegreeProfile {
        if rate < 0.7 {
            DegreeProfile {
                id: "irr-2-3-8".into(),
                var_degrees: vec![(2, 0.506), (3, 0.319), (8, 0.175)],
            }
        } else {
            DegreeProfile {
                id: "irr-2-3".into(),
                var_degrees: vec![(2, 0.04), (3, 0.96)],
            }
        }
    }

    /// Integer degree sequence for `n` variables, highest-fraction degree
    /// absorbing the rounding.
    pub fn degree_sequence(&self, n: usize) -> Vec<usize> {
        let mut counts: Vec<usize> = self
            .var_degrees
            .iter()
            .map(|&(_, f)| (f * n as f64).round() as usize)
            .collect();
        let total: usize = counts.iter().sum();
        let main = (0..counts.len())
            .max_by(|&a, &b| self.var_degrees[a].1.total_cmp(&self.var_degrees[b].1))
            .unwrap_or(0);
        counts[main] = (counts[main] + n).saturating_sub(total);
        let mut seq = Vec::with_capacity(n);
        for (&(d, _), &c) in self.var_degrees.iter().zip(&counts) {
            seq.extend(std::iter::repeat_n(d, c));
        }
        seq.truncate(n);
        seq
    }
}

/// Sparse parity-check matrix stored by rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    n: usize,
    rate: f64,
    seed: u64,
    check_ptr: Vec<u32>,
    check_vars: Vec<u32>,
}

/// BFS depth limit in the edge-growth search; girth ≥ 6 only needs depth 1,
/// larger depths push cycles further out at a construction-time cost.
pub const PEG_MAX_DEPTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub duplicate_edges: usize,
    pub four_cycles: usize,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.duplicate_edges == 0 && self.four_cycles == 0
    }
}

impl LdpcCode {
    pub fn checks_for(n: usize, rate: f64) -> usize {
        (n as f64 * (1.0 - rate)).round() as usize
    }

    /// Progressive edge growth with the table profile for `rate`.
    pub fn build(n: usize, rate: f64, seed: u64) -> Result<Self> {
        Self::build_with_profile(n, rate, seed, &DegreeProfile::for_rate(rate))
    }

    pub fn build_with_profile(
        n: usize,
        rate: f64,
        seed: u64,
        profile: &DegreeProfile,
    ) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(ReconError::InvalidParameter(format!("rate {rate}")));
        }
        if n < 1000 {
            return Err(ReconError::InvalidParameter(format!("block length {n} < 1000")));
        }
        let m = Self::checks_for(n, rate);
        let degrees = profile.degree_sequence(n);
        if let Some(&d) = degrees.iter().max() {
            if d > m {
                return Err(ReconError::Construction(format!(
                    "variable degree {d} exceeds {m} checks"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut check_adj: Vec<Vec<u32>> = vec![Vec::new(); m];
        let mut var_adj: Vec<Vec<u32>> = vec![Vec::new(); n];

        let mut check_stamp = vec![0u32; m];
        let mut var_stamp = vec![0u32; n];
        let mut stamp = 0u32;
        let mut layer: Vec<u32> = Vec::new();
        let mut next: Vec<u32> = Vec::new();
        let mut candidates: Vec<u32> = Vec::new();

        // Lowest degrees first.
        for (v, &dv) in degrees.iter().enumerate() {
            for _ in 0..dv {
                stamp += 1;
                candidates.clear();
                if var_adj[v].is_empty() {
                    candidates.extend(0..m as u32);
                } else {
                    var_stamp[v] = stamp;
                    layer.clear();
                    for &c in &var_adj[v] {
                        check_stamp[c as usize] = stamp;
                        layer.push(c);
                    }
                    let mut reached = layer.len();
                    let mut depth = 0;
                    loop {
                        next.clear();
                        for &c in &layer {
                            for &u in &check_adj[c as usize] {
                                if var_stamp[u as usize] == stamp {
                                    continue;
                                }
                                var_stamp[u as usize] = stamp;
                                for &c2 in &var_adj[u as usize] {
                                    if check_stamp[c2 as usize] != stamp {
                                        check_stamp[c2 as usize] = stamp;
                                        next.push(c2);
                                    }
                                }
                            }
                        }
                        depth += 1;
                        if next.is_empty() || (depth >= PEG_MAX_DEPTH && reached + next.len() < m) {
                            // Stalled or deep enough: anything unreached.
                            candidates.extend(
                                (0..m as u32).filter(|&c| check_stamp[c as usize] != stamp),
                            );
                            break;
                        }
                        if reached + next.len() == m {
                            if depth == 1 {
                                return Err(ReconError::Construction(format!(
                                    "no check at distance > 1 from variable {v}; \
                                     profile too dense for {m} checks"
                                )));
                            }
                            // Everything reachable: take the farthest layer.
                            candidates.extend_from_slice(&next);
                            break;
                        }
                        reached += next.len();
                        std::mem::swap(&mut layer, &mut next);
                    }
                    if candidates.is_empty() {
                        return Err(ReconError::Construction(format!(
                            "no admissible check for variable {v}"
                        )));
                    }
                }
                let min_deg = candidates
                    .iter()
                    .map(|&c| check_adj[c as usize].len())
                    .min()
                    .unwrap_or(0);
                candidates.retain(|&c| check_adj[c as usize].len() == min_deg);
                let c = candidates[rng.random_range(0..candidates.len())];
                check_adj[c as usize].push(v as u32);
                var_adj[v].push(c);
            }
        }
        if check_adj.iter().any(|c| c.is_empty()) {
            return Err(ReconError::Construction("check with no variables".into()));
        }
        Ok(Self::from_checks(n, rate, seed, check_adj))
    }

    fn from_checks(n: usize, rate: f64, seed: u64, mut checks: Vec<Vec<u32>>) -> Self {
        let mut check_ptr = Vec::with_capacity(checks.len() + 1);
        let mut check_vars = Vec::new();
        check_ptr.push(0);
        for c in checks.iter_mut() {
            c.sort_unstable();
            check_vars.extend_from_slice(c);
            check_ptr.push(check_vars.len() as u32);
        }
        LdpcCode {
            n,
            rate,
            seed,
            check_ptr,
            check_vars,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.check_ptr.len() - 1
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn edges(&self) -> usize {
        self.check_vars.len()
    }

    pub fn check(&self, c: usize) -> &[u32] {
        &self.check_vars[self.check_ptr[c] as usize..self.check_ptr[c + 1] as usize]
    }

    pub(crate) fn check_ptr(&self) -> &[u32] {
        &self.check_ptr
    }

    pub(crate) fn check_vars(&self) -> &[u32] {
        &self.check_vars
    }

    pub fn variable_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n];
        for &v in &self.check_vars {
            d[v as usize] += 1;
        }
        d
    }

    /// `H · bits` over GF(2).
    pub fn syndrome(&self, bits: &[u8]) -> Result<Vec<u8>> {
        if bits.len() != self.n {
            return Err(ReconError::SizeMismatch {
                expected: self.n,
                got: bits.len(),
            });
        }
        Ok((0..self.m())
            .map(|c| self.check(c).iter().fold(0u8, |a, &v| a ^ (bits[v as usize] & 1)))
            .collect())
    }

    /// Counts duplicate edges and 4-cycles by exhaustive search.
    pub fn audit(&self) -> AuditReport {
        let mut duplicate_edges = 0;
        for c in 0..self.m() {
            duplicate_edges += self.check(c).windows(2).filter(|w| w[0] == w[1]).count();
        }
        let mut var_checks: Vec<Vec<u32>> = vec![Vec::new(); self.n];
        for c in 0..self.m() {
            for &v in self.check(c) {
                var_checks[v as usize].push(c as u32);
            }
        }
        // Two variables sharing two distinct checks form a 4-cycle.
        let mut shared = vec![0u32; self.n];
        let mut touched = Vec::new();
        let mut four_cycles = 0;
        for (v, checks) in var_checks.iter().enumerate() {
            let mut seen = checks.clone();
            seen.dedup();
            for &c in &seen {
                for &u in self.check(c as usize) {
                    if (u as usize) > v {
                        if shared[u as usize] == 0 {
                            touched.push(u);
                        }
                        shared[u as usize] += 1;
                    }
                }
            }
            for &u in &touched {
                let k = shared[u as usize] as usize;
                four_cycles += k * k.saturating_sub(1) / 2;
                shared[u as usize] = 0;
            }
            touched.clear();
        }
        AuditReport {
            duplicate_edges,
            four_cycles,
        }
    }

    /// Header `n m rate seed`, then one line per check with its variables.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {} {}", self.n, self.m(), self.rate, self.seed)?;
        let mut line = String::new();
        for c in 0..self.m() {
            line.clear();
            for (i, v) in self.check(c).iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ReconError::Format("empty code file".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(ReconError::Format(format!("bad header '{header}'")));
        }
        let bad = |what: &str| ReconError::Format(format!("bad {what} in header '{header}'"));
        let n: usize = fields[0].parse().map_err(|_| bad("n"))?;
        let m: usize = fields[1].parse().map_err(|_| bad("m"))?;
        let rate: f64 = fields[2].parse().map_err(|_| bad("rate"))?;
        let seed: u64 = fields[3].parse().map_err(|_| bad("seed"))?;
        let mut checks = Vec::with_capacity(m);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vars = line
                .split_whitespace()
                .map(|t| match t.parse::<u32>() {
                    Ok(v) if (v as usize) < n => Ok(v),
                    _ => Err(ReconError::Format(format!("bad variable index '{t}'"))),
                })
                .collect::<Result<Vec<u32>>>()?;
            checks.push(vars);
        }
        if checks.len() != m {
            return Err(ReconError::Format(format!(
                "header declares {m} checks, file has {}",
                checks.len()
            )));
        }
        Ok(Self::from_checks(n, rate, seed, checks))
    }
}
