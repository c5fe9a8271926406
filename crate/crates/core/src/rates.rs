//! Secret-information rates for reverse-reconciliation coherent-state CV-QKD.
//!
//! All variances are expressed in shot-noise units (the vacuum quadrature
//! variance is 1). The channel is described by its transmission `T` and excess
//! noise `ε` referred to its input; Bob's homodyne detector by its efficiency
//! `η` and electronic noise `v_el`. Eve's information is bounded either by the
//! Shannon information accessible to an individual attacker ([`eve_info_individual`])
//! or by the Holevo quantity of a collective attacker ([`holevo_bound`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance below which a negative discriminant is treated as zero.
pub const DISCRIMINANT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("singular model: {0}")]
    SingularModel(&'static str),
    #[error("entropy function undefined for negative argument {0}")]
    NegativeEntropyArgument(f64),
    #[error("negative discriminant {value} in symplectic spectrum ({which})")]
    NegativeDiscriminant { which: &'static str, value: f64 },
}

pub type Result<T> = std::result::Result<T, RateError>;

/// Quantum channel between Alice and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub transmission: f64,
    pub excess_noise: f64,
}

impl ChannelModel {
    pub fn new(transmission: f64, excess_noise: f64) -> Result<Self> {
        let ch = ChannelModel {
            transmission,
            excess_noise,
        };
        ch.validate()?;
        Ok(ch)
    }

    pub fn ideal() -> Self {
        ChannelModel {
            transmission: 1.0,
            excess_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.transmission.is_finite() || self.transmission > 1.0 || self.transmission < 0.0 {
            return Err(RateError::InvalidParameter {
                name: "transmission",
                value: self.transmission,
            });
        }
        if self.transmission == 0.0 {
            return Err(RateError::SingularModel("zero channel transmission"));
        }
        if !self.excess_noise.is_finite() || self.excess_noise < 0.0 {
            return Err(RateError::InvalidParameter {
                name: "excess_noise",
                value: self.excess_noise,
            });
        }
        Ok(())
    }
}

/// Bob's homodyne detector, trusted under the realistic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub efficiency: f64,
    pub electronic_noise: f64,
}

impl DetectorModel {
    pub fn new(efficiency: f64, electronic_noise: f64) -> Result<Self> {
        let det = DetectorModel {
            efficiency,
            electronic_noise,
        };
        det.validate()?;
        Ok(det)
    }

    pub fn ideal() -> Self {
        DetectorModel {
            efficiency: 1.0,
            electronic_noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.efficiency.is_finite() || self.efficiency > 1.0 || self.efficiency < 0.0 {
            return Err(RateError::InvalidParameter {
                name: "efficiency",
                value: self.efficiency,
            });
        }
        if self.efficiency == 0.0 {
            return Err(RateError::SingularModel("zero detection efficiency"));
        }
        if !self.electronic_noise.is_finite() || self.electronic_noise < 0.0 {
            return Err(RateError::InvalidParameter {
                name: "electronic_noise",
                value: self.electronic_noise,
            });
        }
        Ok(())
    }

    /// Variance of the thermal state modelling the electronic noise,
    /// `1 + v_el / (1 - η)`. Infinite for a unit-efficiency detector with
    /// electronic noise.
    pub fn thermal_variance(&self) -> f64 {
        if self.electronic_noise == 0.0 {
            1.0
        } else {
            1.0 + self.electronic_noise / (1.0 - self.efficiency)
        }
    }
}

/// Alice's Gaussian modulation. The shot noise is fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub variance: f64,
}

impl Modulation {
    pub fn new(variance: f64) -> Result<Self> {
        let m = Modulation { variance };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.variance.is_finite() || self.variance < 0.0 {
            return Err(RateError::InvalidParameter {
                name: "modulation_variance",
                value: self.variance,
            });
        }
        Ok(())
    }

    /// `V = V_A + 1`, the variance of each quadrature of Alice's output.
    pub fn total_variance(&self) -> f64 {
        self.variance + 1.0
    }
}

/// Added-noise quantities, all referred to the channel input except `chi_hom`
/// which is referred to Bob's input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub chi_line: f64,
    pub chi_hom: f64,
    pub chi_tot: f64,
}

/// `G(x) = (x+1) log2(x+1) - x log2 x`, the entropy of a thermal mode with
/// mean photon number `x`.
pub fn g_entropy(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(RateError::NegativeEntropyArgument(x));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok((x + 1.0) * (x + 1.0).log2() - x * x.log2())
}

pub fn noise_budget(ch: &ChannelModel, det: &DetectorModel) -> Result<NoiseBudget> {
    ch.validate()?;
    det.validate()?;
    let chi_line = 1.0 / ch.transmission - 1.0 + ch.excess_noise;
    let chi_hom = (1.0 + det.electronic_noise) / det.efficiency - 1.0;
    let chi_tot = chi_line + chi_hom / ch.transmission;
    Ok(NoiseBudget {
        chi_line,
        chi_hom,
        chi_tot,
    })
}

/// Shannon mutual information between Alice and Bob, bits per symbol.
pub fn mutual_info_ab(modulation: &Modulation, budget: &NoiseBudget) -> f64 {
    let v = modulation.total_variance();
    0.5 * ((v + budget.chi_tot) / (1.0 + budget.chi_tot)).log2()
}

/// Bob's variance `V_B` and his variance conditioned on an individual
/// attacker's optimal estimate `V_B|E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualAttack {
    pub v_b: f64,
    pub v_b_given_e: f64,
    pub i_be: f64,
}

pub fn individual_attack(
    modulation: &Modulation,
    ch: &ChannelModel,
    det: &DetectorModel,
) -> Result<IndividualAttack> {
    modulation.validate()?;
    let budget = noise_budget(ch, det)?;
    let v = modulation.total_variance();
    let (t, eta) = (ch.transmission, det.efficiency);
    let v_b = eta * t * (v + budget.chi_tot);
    let inner = t * (1.0 / v + budget.chi_line);
    if inner <= 0.0 {
        return Err(RateError::SingularModel("vanishing conditional variance"));
    }
    let v_b_given_e = eta * (1.0 / inner + budget.chi_hom);
    if v_b_given_e <= 0.0 || !v_b_given_e.is_finite() {
        return Err(RateError::SingularModel("vanishing conditional variance"));
    }
    Ok(IndividualAttack {
        v_b,
        v_b_given_e,
        i_be: 0.5 * (v_b / v_b_given_e).log2(),
    })
}

/// Eve's Shannon information on Bob's data under an individual attack,
/// bits per symbol. Eve gains nothing from the detector's own noise.
pub fn eve_info_individual(
    modulation: &Modulation,
    ch: &ChannelModel,
    det: &DetectorModel,
) -> Result<f64> {
    Ok(individual_attack(modulation, ch, det)?.i_be)
}

/// Intermediate quantities of the Holevo bound. `a`, `b` determine the
/// spectrum of the Alice-Bob state; `c`, `d` that of Alice's side after Bob's
/// homodyne measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolevoTerms {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub eigenvalues: [f64; 5],
    pub chi_be: f64,
}

/// Returns the two symplectic eigenvalues whose squares are the roots of
/// `z^2 - sum z + product = 0`.
fn symplectic_pair(sum: f64, product: f64, which: &'static str) -> Result<(f64, f64)> {
    let mut disc = sum * sum - 4.0 * product;
    if disc < 0.0 {
        if disc < -DISCRIMINANT_TOLERANCE {
            return Err(RateError::NegativeDiscriminant { which, value: disc });
        }
        disc = 0.0;
    }
    let root = disc.sqrt();
    let hi = 0.5 * (sum + root);
    // The small root loses precision by cancellation; recover it from the product.
    let lo = if hi > 0.0 { product / hi } else { 0.5 * (sum - root) };
    Ok((hi.max(0.0).sqrt(), lo.max(0.0).sqrt()))
}

/// Holevo bound on Eve's information for a collective attack against
/// reverse reconciliation.
pub fn holevo_bound(
    modulation: &Modulation,
    ch: &ChannelModel,
    det: &DetectorModel,
) -> Result<HolevoTerms> {
    modulation.validate()?;
    let budget = noise_budget(ch, det)?;
    let v = modulation.total_variance();
    let t = ch.transmission;
    let NoiseBudget {
        chi_line,
        chi_hom,
        chi_tot,
    } = budget;

    let a = v * v * (1.0 - 2.0 * t) + 2.0 * t + t * t * (v + chi_line).powi(2);
    let b = t * t * (v * chi_line + 1.0).powi(2);
    let sqrt_b = b.sqrt();
    let denom = t * (v + chi_tot);
    let c = (v * sqrt_b + t * (v + chi_line) + a * chi_hom) / denom;
    let d = sqrt_b * (v + sqrt_b * chi_hom) / denom;

    let (l1, l2) = symplectic_pair(a, b, "A, B")?;
    let (l3, l4) = symplectic_pair(c, d, "C, D")?;
    let eigenvalues = [l1, l2, l3, l4, 1.0];

    // Eigenvalues sit at or above 1 up to rounding; clamp the argument of G.
    let g = |l: f64| g_entropy(((l - 1.0) / 2.0).max(0.0));
    let chi_be = g(l1)? + g(l2)? - g(l3)? - g(l4)?;
    Ok(HolevoTerms {
        a,
        b,
        c,
        d,
        eigenvalues,
        chi_be,
    })
}

/// Complete rate listing at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub i_ab: f64,
    pub i_be: f64,
    pub chi_be: f64,
    pub delta_shannon_raw: f64,
    pub delta_holevo_raw: f64,
    pub delta_shannon_eff: f64,
    pub delta_holevo_eff: f64,
    pub beta: f64,
    pub p_fail: f64,
    /// Effective repetition rate used for the per-second figures, symbols/s.
    pub rep_rate: f64,
    pub budget: NoiseBudget,
    pub holevo: HolevoTerms,
}

impl RateReport {
    pub fn per_second(&self, bits_per_symbol: f64) -> f64 {
        bits_per_symbol * self.rep_rate
    }

    pub fn i_ab_per_s(&self) -> f64 {
        self.per_second(self.i_ab)
    }
    pub fn i_be_per_s(&self) -> f64 {
        self.per_second(self.i_be)
    }
    pub fn chi_be_per_s(&self) -> f64 {
        self.per_second(self.chi_be)
    }
    pub fn delta_shannon_raw_per_s(&self) -> f64 {
        self.per_second(self.delta_shannon_raw)
    }
    pub fn delta_holevo_raw_per_s(&self) -> f64 {
        self.per_second(self.delta_holevo_raw)
    }
    pub fn delta_shannon_eff_per_s(&self) -> f64 {
        self.per_second(self.delta_shannon_eff)
    }
    pub fn delta_holevo_eff_per_s(&self) -> f64 {
        self.per_second(self.delta_holevo_eff)
    }
}

fn check_fraction(name: &'static str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(RateError::InvalidParameter { name, value });
    }
    Ok(())
}

/// Raw and effective secret rates. The effective rates are
/// `(β I_AB - I_E)(1 - p_fail)` with `I_E` the individual or Holevo bound.
pub fn secret_rates(
    modulation: &Modulation,
    ch: &ChannelModel,
    det: &DetectorModel,
    rep_rate: f64,
    beta: f64,
    p_fail: f64,
) -> Result<RateReport> {
    check_fraction("beta", beta)?;
    check_fraction("p_fail", p_fail)?;
    if !rep_rate.is_finite() || rep_rate < 0.0 {
        return Err(RateError::InvalidParameter {
            name: "rep_rate",
            value: rep_rate,
        });
    }
    let budget = noise_budget(ch, det)?;
    let i_ab = mutual_info_ab(modulation, &budget);
    let i_be = eve_info_individual(modulation, ch, det)?;
    let holevo = holevo_bound(modulation, ch, det)?;
    let kept = 1.0 - p_fail;
    Ok(RateReport {
        i_ab,
        i_be,
        chi_be: holevo.chi_be,
        delta_shannon_raw: i_ab - i_be,
        delta_holevo_raw: i_ab - holevo.chi_be,
        delta_shannon_eff: (beta * i_ab - i_be) * kept,
        delta_holevo_eff: (beta * i_ab - holevo.chi_be) * kept,
        beta,
        p_fail,
        rep_rate,
        budget,
        holevo,
    })
}

/// Every parameter needed to evaluate the rates at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub modulation: Modulation,
    pub channel: ChannelModel,
    pub detector: DetectorModel,
    pub rep_rate: f64,
    pub beta: f64,
    pub p_fail: f64,
}

impl OperatingPoint {
    /// The 25 km fiber link: measured `T = 0.302`, `ε = 0.005` at
    /// `V_A = 18.5`, `η = 0.606`, `v_el = 0.041`, 350 kHz effective rate,
    /// reconciliation efficiency 0.898.
    pub fn link_25km() -> Self {
        OperatingPoint {
            modulation: Modulation { variance: 18.5 },
            channel: ChannelModel {
                transmission: 0.302,
                excess_noise: 0.005,
            },
            detector: DetectorModel {
                efficiency: 0.606,
                electronic_noise: 0.041,
            },
            rep_rate: 350_000.0,
            beta: 0.898,
            p_fail: 0.0,
        }
    }

    pub fn rates(&self) -> Result<RateReport> {
        secret_rates(
            &self.modulation,
            &self.channel,
            &self.detector,
            self.rep_rate,
            self.beta,
            self.p_fail,
        )
    }
}

/// Transmission of a fiber of `distance_km` with attenuation `loss_db_per_km`.
pub fn transmission_at_distance(distance_km: f64, loss_db_per_km: f64) -> f64 {
    10f64.powf(-loss_db_per_km * distance_km / 10.0)
}

/// Independent variable of a rate sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    /// Fiber length in km; the fixed point's transmission is replaced by the
    /// fiber transmission.
    Distance { loss_db_per_km: f64 },
    /// Modulation variance. With `scale_excess_noise`, `ε` grows linearly
    /// with `V_A` through the fixed point's `(V_A, ε)`.
    ModulationVariance { scale_excess_noise: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub x: f64,
    pub report: RateReport,
}

/// Evaluates the rates over `grid`, which must be non-decreasing.
pub fn sweep(curve: Curve, grid: &[f64], fixed: &OperatingPoint) -> Result<Vec<SweepPoint>> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(RateError::InvalidParameter {
            name: "grid",
            value: f64::NAN,
        });
    }
    grid.iter()
        .map(|&x| {
            let mut point = *fixed;
            match curve {
                Curve::Distance { loss_db_per_km } => {
                    point.channel.transmission = transmission_at_distance(x, loss_db_per_km);
                }
                Curve::ModulationVariance { scale_excess_noise } => {
                    point.modulation.variance = x;
                    if scale_excess_noise {
                        let anchor = fixed.modulation.variance;
                        if anchor > 0.0 {
                            point.channel.excess_noise = fixed.channel.excess_noise * x / anchor;
                        }
                    }
                }
            }
            Ok(SweepPoint {
                x,
                report: point.rates()?,
            })
        })
        .collect()
}

/// Generates `from, from + step, ...` up to and including `to` (within
/// half a step).
pub fn linear_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || to < from {
        return vec![from];
    }
    let count = ((to - from) / step + 0.5).floor() as usize;
    (0..=count).map(|i| from + i as f64 * step).collect()
}
