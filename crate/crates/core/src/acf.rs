//! Range autocorrelation of a single OFDM symbol and the sidelobe metrics
//! used as sensing-security proxies.
//!
//! The ACF uses the un-normalized inverse-DFT convention
//! `Lambda[k] = sum_n |w_n|^2 |s_n|^2 e^{+j 2 pi k n / N}`, so an equal
//! allocation with unit-modulus symbols gives `N delta[k]`. Receiver range
//! profiles use the unitary convention instead and differ by `sqrt(N)`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::dsp::ifft_in_place;
use crate::error::{Error, Result};
use crate::montecarlo::par_trials;
use crate::stats::Welford;
use crate::units::linear_to_db;
use crate::waveform::{PowerAllocation, SecureAcfSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfProfile {
    /// `Lambda[k]` for a realization, or `E[Lambda[k]]` for an expectation.
    pub values: Vec<Complex64>,
    /// `|Lambda[k]|^2`, or `E|Lambda[k]|^2` for an expectation.
    pub squared: Vec<f64>,
    pub is_expectation: bool,
}

impl AcfProfile {
    pub fn n(&self) -> usize {
        self.squared.len()
    }

    /// Highest off-peak level relative to the mainlobe.
    pub fn psl(&self) -> f64 {
        psl(self)
    }

    pub fn isl(&self) -> f64 {
        isl(self)
    }

    /// Writes `k, range_m, value_re, value_im, squared` rows.
    pub fn write_csv<W: Write>(&self, out: W, bin_width_m: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "range_m", "value_re", "value_im", "squared"])?;
        for (k, (v, s)) in self.values.iter().zip(&self.squared).enumerate() {
            w.write_record([
                k.to_string(),
                (k as f64 * bin_width_m).to_string(),
                v.re.to_string(),
                v.im.to_string(),
                s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// PSL and ISL in linear and dB form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityMetrics {
    pub psl_linear: f64,
    pub isl_linear: f64,
    pub psl_db: f64,
    pub isl_db: f64,
}

impl SecurityMetrics {
    pub fn from_linear(psl_linear: f64, isl_linear: f64) -> Self {
        Self {
            psl_linear,
            isl_linear,
            psl_db: linear_to_db(psl_linear),
            isl_db: linear_to_db(isl_linear),
        }
    }
}

fn weighted_energies(alloc: &PowerAllocation, symbols: &[Complex64]) -> Result<Vec<Complex64>> {
    if alloc.n() != symbols.len() {
        return Err(Error::LengthMismatch {
            expected: alloc.n(),
            got: symbols.len(),
        });
    }
    Ok(alloc
        .power()
        .iter()
        .zip(symbols)
        .map(|(p, s)| Complex64::new(p * s.norm_sqr(), 0.0))
        .collect())
}

/// ACF of one OFDM symbol.
pub fn empirical_acf(alloc: &PowerAllocation, symbols: &[Complex64]) -> Result<AcfProfile> {
    let mut values = weighted_energies(alloc, symbols)?;
    ifft_in_place(&mut values);
    let squared = values.iter().map(|v| v.norm_sqr()).collect();
    Ok(AcfProfile {
        values,
        squared,
        is_expectation: false,
    })
}

/// Mean ACF `E[Lambda[k]]` of an allocation (symbols have unit mean power).
fn mean_acf(alloc: &PowerAllocation) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = alloc.power().iter().map(|&p| Complex64::new(p, 0.0)).collect();
    ifft_in_place(&mut v);
    v
}

/// Closed-form `E|Lambda[k]|^2` for a comb-structured allocation:
/// mainlobe `N^2`, peaks `alpha^2` every `N / kappa` bins and a flat floor
/// `(mu4 - 1)(N p^2 / kappa + N (1 - 1/kappa) q^2)`.
///
/// The floor is added at every bin including `k = 0`; this is the exact
/// expectation rather than the mainlobe-only `N^2` shorthand.
pub fn expected_sq_acf(alloc: &PowerAllocation, c: &Constellation) -> Result<AcfProfile> {
    let s = alloc.structure().ok_or(Error::Structure)?;
    let n = alloc.n();
    let nf = n as f64;
    let kappa = s.kappa as f64;
    let floor = (c.mu4() - 1.0) * (nf * s.p * s.p / kappa + nf * (1.0 - 1.0 / kappa) * s.q * s.q);
    let alpha = nf * (1.0 - s.q);
    let lambda = n / s.kappa;
    let squared = (0..n)
        .map(|k| {
            let deterministic = if k == 0 {
                nf * nf
            } else if s.kappa > 1 && k % lambda == 0 {
                alpha * alpha
            } else {
                0.0
            };
            deterministic + floor
        })
        .collect();
    Ok(AcfProfile {
        values: mean_acf(alloc),
        squared,
        is_expectation: true,
    })
}

/// `E|Lambda[k]|^2 = (mu4 - 1) sum |w_n|^4 + |sum |w_n|^2 e^{j 2 pi k n / N}|^2`
/// for an arbitrary deterministic allocation.
pub fn expected_sq_acf_exact(alloc: &PowerAllocation, c: &Constellation) -> AcfProfile {
    let values = mean_acf(alloc);
    let floor = (c.mu4() - 1.0) * alloc.sum_squares();
    let squared = values.iter().map(|v| v.norm_sqr() + floor).collect();
    AcfProfile {
        values,
        squared,
        is_expectation: true,
    }
}

/// Monte-Carlo average of `|Lambda[k]|^2` with per-bin standard errors.
#[derive(Debug, Clone)]
pub struct MonteCarloAcf {
    pub profile: AcfProfile,
    pub std_error: Vec<f64>,
    pub trials: usize,
}

pub fn monte_carlo_sq_acf(
    alloc: &PowerAllocation,
    c: &Constellation,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloAcf> {
    monte_carlo_sq_acf_with(c, alloc.n(), trials, seed, |_rng| Ok(alloc.clone()))
}

/// Monte-Carlo average where each trial may draw its own allocation
/// (used for jittered allocations).
pub fn monte_carlo_sq_acf_with<F>(
    c: &Constellation,
    n: usize,
    trials: usize,
    seed: u64,
    make_alloc: F,
) -> Result<MonteCarloAcf>
where
    F: Fn(&mut crate::seed::TrialRng) -> Result<PowerAllocation> + Sync + Send,
{
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let per_trial = par_trials(trials, seed, |_, rng| -> Result<(Vec<Complex64>, Vec<f64>)> {
        let alloc = make_alloc(rng)?;
        let symbols: Vec<Complex64> = (0..n).map(|_| c.draw(rng)).collect();
        let acf = empirical_acf(&alloc, &symbols)?;
        Ok((acf.values, acf.squared))
    });
    let mut sq = vec![Welford::default(); n];
    let mut re = vec![Welford::default(); n];
    let mut im = vec![Welford::default(); n];
    for r in per_trial {
        let (values, squared) = r?;
        for k in 0..n {
            sq[k].push(squared[k]);
            re[k].push(values[k].re);
            im[k].push(values[k].im);
        }
    }
    Ok(MonteCarloAcf {
        profile: AcfProfile {
            values: re
                .iter()
                .zip(&im)
                .map(|(a, b)| Complex64::new(a.mean(), b.mean()))
                .collect(),
            squared: sq.iter().map(Welford::mean).collect(),
            is_expectation: true,
        },
        std_error: sq.iter().map(Welford::std_error).collect(),
        trials,
    })
}

/// `max_{k != 0} squared[k] / squared[0]`.
pub fn psl(profile: &AcfProfile) -> f64 {
    let main = profile.squared[0];
    profile.squared[1..].iter().fold(0.0f64, |m, &v| m.max(v)) / main
}

/// `sum_{k != 0} squared[k] / squared[0]`.
pub fn isl(profile: &AcfProfile) -> f64 {
    crate::stats::compensated_sum(profile.squared[1..].iter().copied()) / profile.squared[0]
}

/// Large-`N` closed forms: `PSL = (1 - q)^2` and
/// `ISL = (kappa - 1)(1 - q)^2 + (mu4 - 1)(p^2 / kappa + (1 - 1/kappa) q^2)`.
pub fn metrics_closed_form(spec: &SecureAcfSpec, c: &Constellation) -> SecurityMetrics {
    metrics_from_pqk(spec.p(), spec.q(), spec.kappa(), c.mu4())
}

pub fn metrics_from_pqk(p: f64, q: f64, kappa: usize, mu4: f64) -> SecurityMetrics {
    let k = kappa as f64;
    let psl = if kappa > 1 { (1.0 - q).powi(2) } else { 0.0 };
    let isl = (k - 1.0) * psl + (mu4 - 1.0) * (p * p / k + (1.0 - 1.0 / k) * q * q);
    SecurityMetrics::from_linear(psl, isl)
}
