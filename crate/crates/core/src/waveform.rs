//! Subcarrier power allocations that shape the range autocorrelation into a
//! comb of artificial peaks.
//!
//! A comb with mainlobe `N`, `L` peaks of height `alpha` and spacing
//! `lambda = N / kappa` maps to a two-level allocation: power `p` on the
//! subcarriers `{n0, n0 + kappa, ...}` and `q` everywhere else, with
//! `p = 1 + alpha L / N`, `q = 1 - alpha / N` and `kappa = L + 1`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::dsp::fft_in_place;
use crate::error::{Error, Result};
use crate::seed::seeded_rng;

/// Smallest admissible per-subcarrier power (linear). A reciprocal filter
/// divides by every subcarrier, so zero power is never allowed.
pub const POWER_FLOOR: f64 = 1e-4;

const SUM_TOL: f64 = 1e-9;

/// Target comb shape: artificial-peak height as a fraction of the mainlobe
/// and the number of peaks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecureAcfSpec {
    alpha_frac: f64,
    num_peaks: usize,
}

impl SecureAcfSpec {
    pub fn new(alpha_frac: f64, num_peaks: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha_frac) {
            return Err(Error::InvalidSpec(format!("alpha/N = {alpha_frac} must lie in [0, 1)")));
        }
        if num_peaks == 0 {
            return Err(Error::InvalidSpec("at least one artificial peak is required".into()));
        }
        Ok(Self { alpha_frac, num_peaks })
    }

    /// Comb whose peak-to-mainlobe power ratio is `psl` (linear) with
    /// spacing `kappa`, i.e. `q = 1 - sqrt(psl)`.
    pub fn from_psl(psl: f64, kappa: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&psl) {
            return Err(Error::InvalidSpec(format!("PSL {psl} must lie in [0, 1)")));
        }
        if kappa < 2 {
            return Err(Error::InvalidSpec("kappa must be at least 2".into()));
        }
        Self::new(psl.sqrt(), kappa - 1)
    }

    pub fn alpha_frac(&self) -> f64 {
        self.alpha_frac
    }

    pub fn num_peaks(&self) -> usize {
        self.num_peaks
    }

    pub fn kappa(&self) -> usize {
        self.num_peaks + 1
    }

    pub fn p(&self) -> f64 {
        1.0 + self.alpha_frac * self.num_peaks as f64
    }

    pub fn q(&self) -> f64 {
        1.0 - self.alpha_frac
    }

    /// Peak spacing in range bins.
    pub fn lambda_bins(&self, n: usize) -> Result<usize> {
        check_divides(self.kappa(), n)?;
        Ok(n / self.kappa())
    }

    /// Artificial-peak height `alpha` for `n` subcarriers.
    pub fn alpha(&self, n: usize) -> f64 {
        self.alpha_frac * n as f64
    }
}

fn check_divides(kappa: usize, n: usize) -> Result<()> {
    if kappa == 0 || !n.is_multiple_of(kappa) {
        return Err(Error::Divisibility { kappa, n });
    }
    Ok(())
}

/// `(p, q, kappa, n0)` metadata of a two-level allocation. `n0` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombStructure {
    pub p: f64,
    pub q: f64,
    pub kappa: usize,
    pub n0: usize,
}

impl CombStructure {
    /// Whether the 0-based subcarrier `index` belongs to the dominant set.
    pub fn is_dominant(&self, index: usize) -> bool {
        is_dominant(index, self.kappa, self.n0)
    }
}

/// Membership of 0-based `index` in `{n0, n0 + kappa, ...}` (1-based `n0`).
pub fn is_dominant(index: usize, kappa: usize, n0: usize) -> bool {
    (index + kappa + 1 - n0 % kappa.max(1)).is_multiple_of(kappa)
}

/// Per-subcarrier powers `|w_n|^2`, summing to `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AllocationDoc", into = "AllocationDoc")]
pub struct PowerAllocation {
    power: Vec<f64>,
    structure: Option<CombStructure>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AllocationDoc {
    n: usize,
    power: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    structure: Option<CombStructure>,
}

impl TryFrom<AllocationDoc> for PowerAllocation {
    type Error = Error;

    fn try_from(doc: AllocationDoc) -> Result<Self> {
        if doc.n != doc.power.len() {
            return Err(Error::LengthMismatch {
                expected: doc.n,
                got: doc.power.len(),
            });
        }
        PowerAllocation::new(doc.power, doc.structure)
    }
}

impl From<PowerAllocation> for AllocationDoc {
    fn from(a: PowerAllocation) -> Self {
        AllocationDoc {
            n: a.power.len(),
            power: a.power,
            structure: a.structure,
        }
    }
}

impl PowerAllocation {
    /// Validates the normalization and floor invariants.
    pub fn new(power: Vec<f64>, structure: Option<CombStructure>) -> Result<Self> {
        let n = power.len();
        if n == 0 {
            return Err(Error::Config("allocation must cover at least one subcarrier".into()));
        }
        if let Some(&bad) = power.iter().find(|v| !v.is_finite() || **v < POWER_FLOOR) {
            return Err(Error::Floor {
                value: bad,
                floor: POWER_FLOOR,
            });
        }
        let total = crate::stats::compensated_sum(power.iter().copied());
        if (total - n as f64).abs() > SUM_TOL * (n as f64).max(1.0) {
            return Err(Error::Config(format!("allocation sums to {total}, expected {n}")));
        }
        if let Some(s) = structure {
            check_divides(s.kappa, n)?;
            if s.n0 == 0 || s.n0 > s.kappa {
                return Err(Error::Config(format!("n0 = {} outside 1..={}", s.n0, s.kappa)));
            }
        }
        Ok(Self { power, structure })
    }

    /// Rescales arbitrary positive powers to sum `N`, then validates.
    pub fn normalized(mut power: Vec<f64>, structure: Option<CombStructure>) -> Result<Self> {
        let n = power.len() as f64;
        let total = crate::stats::compensated_sum(power.iter().copied());
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Config(format!("cannot normalize allocation with total {total}")));
        }
        power.iter_mut().for_each(|v| *v *= n / total);
        Self::new(power, structure)
    }

    /// Equal power on every subcarrier.
    pub fn uniform(n: usize) -> Self {
        Self {
            power: vec![1.0; n],
            structure: Some(CombStructure {
                p: 1.0,
                q: 1.0,
                kappa: 1,
                n0: 1,
            }),
        }
    }

    pub fn n(&self) -> usize {
        self.power.len()
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn structure(&self) -> Option<&CombStructure> {
        self.structure.as_ref()
    }

    /// Amplitudes `|w_n|` (zero phase).
    pub fn amplitudes(&self) -> Vec<f64> {
        self.power.iter().map(|p| p.sqrt()).collect()
    }

    pub fn sum_inverse(&self) -> f64 {
        crate::stats::compensated_sum(self.power.iter().map(|p| p.recip()))
    }

    pub fn sum_squares(&self) -> f64 {
        crate::stats::compensated_sum(self.power.iter().map(|p| p * p))
    }
}

/// Two-level comb allocation, dominant set starting at 1-based `n0`.
pub fn structured_allocation(spec: &SecureAcfSpec, n: usize, n0: usize) -> Result<PowerAllocation> {
    let kappa = spec.kappa();
    check_divides(kappa, n)?;
    if n0 == 0 || n0 > kappa {
        return Err(Error::Config(format!("n0 = {n0} outside 1..={kappa}")));
    }
    let (p, q) = (spec.p(), spec.q());
    if q < POWER_FLOOR {
        return Err(Error::Floor {
            value: q,
            floor: POWER_FLOOR,
        });
    }
    let power = (0..n).map(|i| if is_dominant(i, kappa, n0) { p } else { q }).collect();
    PowerAllocation::new(power, Some(CombStructure { p, q, kappa, n0 }))
}

/// Comb allocation with Gaussian power jitter of standard deviation
/// `jitter` around the nominal levels, rescaled back to sum `N`.
pub fn stochastic_allocation(
    spec: &SecureAcfSpec,
    n: usize,
    n0: usize,
    jitter: f64,
    seed: u64,
) -> Result<PowerAllocation> {
    let mut rng = seeded_rng(seed);
    stochastic_allocation_with(spec, n, n0, jitter, &mut rng)
}

pub fn stochastic_allocation_with<R: Rng + ?Sized>(
    spec: &SecureAcfSpec,
    n: usize,
    n0: usize,
    jitter: f64,
    rng: &mut R,
) -> Result<PowerAllocation> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidSpec(format!(
            "jitter {jitter} must be finite and non-negative"
        )));
    }
    let base = structured_allocation(spec, n, n0)?;
    if jitter == 0.0 {
        return Ok(base);
    }
    let noise = Normal::new(0.0, jitter).expect("finite positive std");
    let mut power = Vec::with_capacity(n);
    for &mean in base.power() {
        let v: f64 = mean + rng.sample(noise);
        if v < POWER_FLOOR {
            return Err(Error::Floor {
                value: v,
                floor: POWER_FLOOR,
            });
        }
        power.push(v);
    }
    PowerAllocation::normalized(power, base.structure)
}

/// Ideal comb `N delta[k] + alpha sum_l delta[k - l lambda]` over `k = 0..N`.
pub fn secure_comb(spec: &SecureAcfSpec, n: usize) -> Result<Vec<f64>> {
    let lambda = spec.lambda_bins(n)?;
    let mut acf = vec![0.0; n];
    acf[0] = n as f64;
    for l in 1..=spec.num_peaks() {
        acf[l * lambda] = spec.alpha(n);
    }
    Ok(acf)
}

/// Recovers `|w_n|^2` from a target ACF by a forward DFT scaled by `1/N`.
pub fn ideal_acf_to_allocation(acf: &[f64]) -> Result<PowerAllocation> {
    let n = acf.len();
    if n == 0 {
        return Err(Error::Config("empty ACF".into()));
    }
    let mut buf: Vec<Complex64> = acf.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    let scale = (n as f64).recip();
    let mut power = Vec::with_capacity(n);
    for (index, v) in buf.iter().enumerate() {
        let v = v * scale;
        if v.im.abs() > 1e-9 * (n as f64) || v.re < POWER_FLOOR {
            return Err(Error::InfeasibleAcf { index, power: v.re });
        }
        power.push(v.re);
    }
    // The DFT of a real comb is exact up to rounding; absorb it.
    PowerAllocation::normalized(power, None)
}
