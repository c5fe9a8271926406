//! Uniform 16-interval quantizer and per-level entropy profiles.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{ReconError, Result};
use crate::rates::{ChannelModel, DetectorModel, Modulation};

pub const NUM_LEVELS: usize = 4;
pub const NUM_INTERVALS: usize = 1 << NUM_LEVELS;

/// Jointly Gaussian `(X, Y)` with `Y = gain·X + Z`, everything in shot-noise
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianLink {
    pub va: f64,
    pub gain: f64,
    pub noise_var: f64,
}

impl GaussianLink {
    pub fn from_model(m: &Modulation, ch: &ChannelModel, det: &DetectorModel) -> Self {
        let eta_t = det.efficiency * ch.transmission;
        GaussianLink {
            va: m.variance,
            gain: eta_t.sqrt(),
            noise_var: 1.0 + det.electronic_noise + eta_t * ch.excess_noise,
        }
    }

    pub fn sigma_y(&self) -> f64 {
        (self.gain * self.gain * self.va + self.noise_var).sqrt()
    }

    pub fn snr(&self) -> f64 {
        self.gain * self.gain * self.va / self.noise_var
    }

    /// I(X;Y) in bits.
    pub fn mutual_info(&self) -> f64 {
        0.5 * (1.0 + self.snr()).log2()
    }
}

/// How the interval width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WidthRule {
    /// Width maximizing I(X;Q(Y)).
    MaxInformation,
    /// Widest width whose I(X;Q(Y)) is within `loss_bits` of the maximum.
    /// Wider intervals make the upper planes more reliable at a small cost
    /// in quantizer information.
    NearOptimal { loss_bits: f64 },
    /// Width given directly, in units of σ_Y.
    Fixed { width_sigma: f64 },
}

impl WidthRule {
    pub const DEFAULT_LOSS_BITS: f64 = 1.1e-3;
}

impl Default for WidthRule {
    fn default() -> Self {
        WidthRule::NearOptimal {
            loss_bits: Self::DEFAULT_LOSS_BITS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    /// Interval width in shot-noise units.
    pub interval_width: f64,
}

impl QuantizerConfig {
    pub fn new(interval_width: f64) -> Result<Self> {
        if !(interval_width > 0.0) || !interval_width.is_finite() {
            return Err(ReconError::InvalidParameter(format!(
                "interval width {interval_width}"
            )));
        }
        Ok(QuantizerConfig { interval_width })
    }

    /// Interval index in `0..16`. Intervals are `(lo, hi]`, so a value on a
    /// boundary goes to the lower interval.
    pub fn interval(&self, y: f64) -> u8 {
        let half = (NUM_INTERVALS / 2) as f64;
        let k = (y / self.interval_width).ceil() + half - 1.0;
        k.clamp(0.0, (NUM_INTERVALS - 1) as f64) as u8
    }

    /// Bit `level` (0 = LSB) of the natural-binary label.
    pub fn label_bit(label: u8, level: usize) -> u8 {
        (label >> level) & 1
    }

    /// Upper boundary of interval `i` (infinite for the last).
    pub fn upper(&self, i: usize) -> f64 {
        if i + 1 >= NUM_INTERVALS {
            f64::INFINITY
        } else {
            (i as f64 + 1.0 - (NUM_INTERVALS / 2) as f64) * self.interval_width
        }
    }

    pub fn lower(&self, i: usize) -> f64 {
        if i == 0 {
            f64::NEG_INFINITY
        } else {
            self.upper(i - 1)
        }
    }

    /// P(Q(Y) = i) for `Y ~ N(mean, var)`.
    pub fn bin_probs(&self, mean: f64, var: f64) -> [f64; NUM_INTERVALS] {
        let s = (2.0 * var).sqrt();
        let mut out = [0.0; NUM_INTERVALS];
        for (i, p) in out.iter_mut().enumerate() {
            *p = gaussian_interval((self.lower(i) - mean) / s, (self.upper(i) - mean) / s);
        }
        out
    }

    pub fn output_entropy(&self, link: &GaussianLink) -> f64 {
        entropy(&self.bin_probs(0.0, link.sigma_y().powi(2)))
    }

    pub fn information(&self, link: &GaussianLink) -> Result<f64> {
        Ok(level_profiles(self, link)?.info_xq)
    }
}

// P(a < U ≤ b) for U ~ N(0, 1/2), i.e. arguments already scaled by sqrt(2σ²).
// Uses whichever tail keeps the difference free of cancellation.
fn gaussian_interval(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else {
        0.5 * (erfc(-b) - erfc(-a))
    }
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.log2()).sum()
}

/// Entropies of the label prefixes (j low bits, j = 0..=4).
fn prefix_entropies(p: &[f64; NUM_INTERVALS]) -> [f64; NUM_LEVELS + 1] {
    let mut out = [0.0; NUM_LEVELS + 1];
    for (j, h) in out.iter_mut().enumerate().skip(1) {
        let groups = 1 << j;
        let mut g = [0.0; NUM_INTERVALS];
        for (i, &q) in p.iter().enumerate() {
            g[i & (groups - 1)] += q;
        }
        *h = entropy(&g[..groups]);
    }
    out
}

const X_RANGE: f64 = 12.0;

/// E_X[H(prefix_j | X = x)] by trapezoid rule with step `h` (in σ_X units).
fn conditional_prefix_entropies(
    q: &QuantizerConfig,
    link: &GaussianLink,
    h: f64,
) -> [f64; NUM_LEVELS + 1] {
    if link.va == 0.0 || link.gain == 0.0 {
        return prefix_entropies(&q.bin_probs(0.0, link.noise_var));
    }
    let sx = link.va.sqrt();
    // The step must also resolve the noise scale once mapped onto x.
    let h = h.min(0.25 * link.noise_var.sqrt() / (link.gain * sx) * h / 0.02);
    let steps = (X_RANGE / h).round() as i64;
    let norm = h / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = [0.0; NUM_LEVELS + 1];
    for k in -steps..=steps {
        let u = k as f64 * h;
        let w = norm * (-0.5 * u * u).exp();
        let p = q.bin_probs(link.gain * sx * u, link.noise_var);
        for (a, e) in acc.iter_mut().zip(prefix_entropies(&p)) {
            *a += w * e;
        }
    }
    acc
}

/// Per-level entropy accounting for a quantizer on a Gaussian link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelProfiles {
    /// H(Q(Y)).
    pub entropy_q: f64,
    /// I(X;Q(Y)).
    pub info_xq: f64,
    /// H(ℓ_j | ℓ_<j).
    pub level_entropy: [f64; NUM_LEVELS],
    /// H(ℓ_j | X, ℓ_<j).
    pub conditional_entropy: [f64; NUM_LEVELS],
    /// 1 − H(ℓ_j | X, ℓ_<j).
    pub ideal_rates: [f64; NUM_LEVELS],
}

const INTEGRATION_TOL: f64 = 1e-9;

pub fn level_profiles(q: &QuantizerConfig, link: &GaussianLink) -> Result<LevelProfiles> {
    let coarse = conditional_prefix_entropies(q, link, 0.02);
    let fine = conditional_prefix_entropies(q, link, 0.01);
    let diff = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if !(diff <= INTEGRATION_TOL) {
        return Err(ReconError::Integration(diff));
    }
    let marginal = prefix_entropies(&q.bin_probs(0.0, link.sigma_y().powi(2)));
    let mut out = LevelProfiles {
        entropy_q: marginal[NUM_LEVELS],
        info_xq: marginal[NUM_LEVELS] - fine[NUM_LEVELS],
        level_entropy: [0.0; NUM_LEVELS],
        conditional_entropy: [0.0; NUM_LEVELS],
        ideal_rates: [0.0; NUM_LEVELS],
    };
    for j in 0..NUM_LEVELS {
        out.level_entropy[j] = marginal[j + 1] - marginal[j];
        out.conditional_entropy[j] = fine[j + 1] - fine[j];
        out.ideal_rates[j] = 1.0 - out.conditional_entropy[j];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerDesign {
    pub config: QuantizerConfig,
    /// Width in units of σ_Y.
    pub width_sigma: f64,
    /// Achieved I(X;Q(Y)).
    pub info_bits: f64,
    /// Maximum of I(X;Q(Y)) over the width.
    pub max_info_bits: f64,
    /// True when the coarse scan showed several local maxima and the grid
    /// fallback was used.
    pub grid_fallback: bool,
}

const WIDTH_RANGE: (f64, f64) = (0.05, 2.0);

fn info_at(link: &GaussianLink, width_sigma: f64) -> f64 {
    let q = QuantizerConfig {
        interval_width: width_sigma * link.sigma_y(),
    };
    let p = conditional_prefix_entropies(&q, link, 0.02);
    q.output_entropy(link) - p[NUM_LEVELS]
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-7 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Chooses the interval width for a link.
pub fn design_quantizer(link: &GaussianLink, rule: WidthRule) -> Result<QuantizerDesign> {
    if !(link.noise_var > 0.0) || !(link.va >= 0.0) {
        return Err(ReconError::InvalidParameter(format!("link {link:?}")));
    }
    let f = |w: f64| info_at(link, w);
    let (lo, hi) = WIDTH_RANGE;

    let coarse = 40;
    let grid: Vec<f64> = (0..=coarse)
        .map(|k| lo + (hi - lo) * k as f64 / coarse as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&w| f(w)).collect();
    let peaks = (1..coarse)
        .filter(|&k| values[k] > values[k - 1] && values[k] > values[k + 1])
        .count();
    let grid_fallback = peaks > 1;

    let best = if grid_fallback {
        let fine = 400;
        let (mut bw, mut bv) = (lo, f64::NEG_INFINITY);
        for k in 0..=fine {
            let w = lo + (hi - lo) * k as f64 / fine as f64;
            let v = f(w);
            if v > bv {
                (bw, bv) = (w, v);
            }
        }
        let step = (hi - lo) / fine as f64;
        golden_max(f, (bw - step).max(lo), (bw + step).min(hi))
    } else {
        let k = (0..=coarse)
            .max_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        golden_max(f, grid[k.saturating_sub(1)], grid[(k + 1).min(coarse)])
    };
    let max_info = f(best);

    let width_sigma = match rule {
        WidthRule::MaxInformation => best,
        WidthRule::Fixed { width_sigma } => width_sigma,
        WidthRule::NearOptimal { loss_bits } => {
            if !(loss_bits >= 0.0) {
                return Err(ReconError::InvalidParameter(format!("loss {loss_bits}")));
            }
            let target = max_info - loss_bits;
            if f(hi) >= target {
                hi
            } else {
                let (mut a, mut b) = (best, hi);
                while b - a > 1e-7 {
                    let m = 0.5 * (a + b);
                    if f(m) >= target {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                a
            }
        }
    };
    let config = QuantizerConfig::new(width_sigma * link.sigma_y())?;
    Ok(QuantizerDesign {
        config,
        width_sigma,
        info_bits: config.information(link)?,
        max_info_bits: max_info,
        grid_fallback,
    })
}
