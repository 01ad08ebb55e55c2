//! Matched and reciprocal filtering for the legitimate receiver and the
//! eavesdropper, range profiles, range-Doppler maps and output SNR.

use std::io::Write;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::dsp::{fft_in_place, unitary_idft};
use crate::error::{Error, Result};
use crate::montecarlo::par_trials;
use crate::scene::{channel_response, transmit_block, OfdmGrid, Reflector};
use crate::seed::complex_gaussian;
use crate::stats::CompensatedSum;
use crate::units::linear_to_db;
use crate::waveform::PowerAllocation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Mf,
    Rf,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Mf => "mf",
            FilterKind::Rf => "rf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observer {
    Alice,
    Eve,
}

impl Observer {
    pub fn label(self) -> &'static str {
        match self {
            Observer::Alice => "alice",
            Observer::Eve => "eve",
        }
    }
}

/// Range profile over `N` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    pub bins: Vec<Complex64>,
    pub range_axis_m: Vec<f64>,
    pub receiver: FilterKind,
    pub who: Observer,
}

impl RangeProfile {
    pub fn power(&self) -> Vec<f64> {
        self.bins.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn peak_bin(&self) -> usize {
        argmax(&self.power())
    }

    /// Writes `bin, range_m, re, im, mag_db` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "range_m", "re", "im", "mag_db"])?;
        for (k, (v, r)) in self.bins.iter().zip(&self.range_axis_m).enumerate() {
            w.write_record([
                k.to_string(),
                r.to_string(),
                v.re.to_string(),
                v.im.to_string(),
                mag_db(*v).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mag_db(v: Complex64) -> f64 {
    linear_to_db(v.norm_sqr().max(1e-30))
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &v)| if v > best.1 { (i, v) } else { best },
        )
        .0
}

/// Per-symbol range profiles, one row per OFDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileStack {
    pub profiles: Array2<Complex64>,
    pub receiver: FilterKind,
    pub who: Observer,
}

impl ProfileStack {
    pub fn num_symbols(&self) -> usize {
        self.profiles.nrows()
    }

    pub fn symbol(&self, m: usize, grid: &OfdmGrid) -> RangeProfile {
        RangeProfile {
            bins: self.profiles.row(m).to_vec(),
            range_axis_m: grid.range_axis(),
            receiver: self.receiver,
            who: self.who,
        }
    }

    /// Coherent slow-time mean of the per-symbol profiles.
    pub fn integrate(&self, grid: &OfdmGrid) -> RangeProfile {
        let mean = self
            .profiles
            .mean_axis(Axis(0))
            .expect("profile stack has at least one symbol");
        RangeProfile {
            bins: mean.to_vec(),
            range_axis_m: grid.range_axis(),
            receiver: self.receiver,
            who: self.who,
        }
    }
}

/// Range-Doppler map, rows are range bins and columns Doppler bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    pub cells: Array2<Complex64>,
    pub range_axis_m: Vec<f64>,
    pub doppler_axis_hz: Vec<f64>,
    pub receiver: FilterKind,
    pub who: Observer,
}

impl RangeDopplerMap {
    pub fn zero_doppler(&self) -> RangeProfile {
        RangeProfile {
            bins: self.cells.column(0).to_vec(),
            range_axis_m: self.range_axis_m.clone(),
            receiver: self.receiver,
            who: self.who,
        }
    }

    /// Writes `bin, doppler, re, im, mag_db` rows (long form).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin", "doppler", "re", "im", "mag_db"])?;
        for ((k, d), v) in self.cells.indexed_iter() {
            w.write_record([
                k.to_string(),
                self.doppler_axis_hz[d].to_string(),
                v.re.to_string(),
                v.im.to_string(),
                mag_db(*v).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_shapes(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn idft_rows(mut freq: Array2<Complex64>) -> Array2<Complex64> {
    for mut row in freq.rows_mut() {
        let t = unitary_idft(row.as_slice().expect("standard layout row"));
        row.iter_mut().zip(t).for_each(|(v, u)| *v = u);
    }
    freq
}

/// `IDFT(y (.) conj(reference))` per symbol.
pub fn matched_filter(y: &Array2<Complex64>, reference: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    check_shapes(y, reference)?;
    let mut f = y.clone();
    f.zip_mut_with(reference, |v, r| *v *= r.conj());
    Ok(idft_rows(f))
}

/// `IDFT(y / reference)` per symbol.
pub fn reciprocal_filter(y: &Array2<Complex64>, reference: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    check_shapes(y, reference)?;
    let mut f = y.clone();
    f.zip_mut_with(reference, |v, r| *v /= r);
    Ok(idft_rows(f))
}

pub fn alice_mf(y: &Array2<Complex64>, alloc: &PowerAllocation, symbols: &Array2<Complex64>) -> Result<ProfileStack> {
    let x = transmit_block(alloc, symbols)?;
    Ok(ProfileStack {
        profiles: matched_filter(y, &x)?,
        receiver: FilterKind::Mf,
        who: Observer::Alice,
    })
}

pub fn alice_rf(y: &Array2<Complex64>, alloc: &PowerAllocation, symbols: &Array2<Complex64>) -> Result<ProfileStack> {
    let x = transmit_block(alloc, symbols)?;
    Ok(ProfileStack {
        profiles: reciprocal_filter(y, &x)?,
        receiver: FilterKind::Rf,
        who: Observer::Alice,
    })
}

/// Eavesdropper matched filter against its estimated reference.
pub fn eve_mf(surveillance: &Array2<Complex64>, reference: &Array2<Complex64>) -> Result<ProfileStack> {
    Ok(ProfileStack {
        profiles: matched_filter(surveillance, reference)?,
        receiver: FilterKind::Mf,
        who: Observer::Eve,
    })
}

pub fn eve_rf(surveillance: &Array2<Complex64>, reference: &Array2<Complex64>) -> Result<ProfileStack> {
    Ok(ProfileStack {
        profiles: reciprocal_filter(surveillance, reference)?,
        receiver: FilterKind::Rf,
        who: Observer::Eve,
    })
}

/// Complete receiver chain: who filters, and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chain {
    AliceMf,
    AliceRf,
    EveMf,
    EveRf,
}

impl Chain {
    pub const ALL: [Chain; 4] = [Chain::AliceMf, Chain::AliceRf, Chain::EveMf, Chain::EveRf];

    pub fn observer(self) -> Observer {
        match self {
            Chain::AliceMf | Chain::AliceRf => Observer::Alice,
            Chain::EveMf | Chain::EveRf => Observer::Eve,
        }
    }

    pub fn filter(self) -> FilterKind {
        match self {
            Chain::AliceMf | Chain::EveMf => FilterKind::Mf,
            Chain::AliceRf | Chain::EveRf => FilterKind::Rf,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Chain::AliceMf => "alice_mf",
            Chain::AliceRf => "alice_rf",
            Chain::EveMf => "eve_mf",
            Chain::EveRf => "eve_rf",
        }
    }

    /// Filters `y` against the true transmit block `x` (Alice) or the
    /// eavesdropper's reference estimate.
    pub fn run(
        self,
        y: &Array2<Complex64>,
        x: &Array2<Complex64>,
        eve_reference: Option<&Array2<Complex64>>,
    ) -> Result<ProfileStack> {
        let reference = match self.observer() {
            Observer::Alice => x,
            Observer::Eve => {
                eve_reference.ok_or_else(|| Error::Config("eavesdropper chain needs a reference block".into()))?
            }
        };
        let profiles = match self.filter() {
            FilterKind::Mf => matched_filter(y, reference)?,
            FilterKind::Rf => reciprocal_filter(y, reference)?,
        };
        Ok(ProfileStack {
            profiles,
            receiver: self.filter(),
            who: self.observer(),
        })
    }
}

impl std::str::FromStr for Chain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Chain::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown receiver chain '{s}'")))
    }
}

/// Slow-time DFT of the per-symbol profiles, scaled by `1 / M` so that the
/// zero-Doppler column is the coherent mean.
pub fn rd_map(stack: &ProfileStack, grid: &OfdmGrid) -> RangeDopplerMap {
    let (m, n) = stack.profiles.dim();
    let mut cells = Array2::zeros((n, m));
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        buf.iter_mut()
            .zip(stack.profiles.column(k))
            .for_each(|(b, v)| *b = *v / m as f64);
        fft_in_place(&mut buf);
        cells.row_mut(k).iter_mut().zip(&buf).for_each(|(c, b)| *c = *b);
    }
    let t = grid.symbol_duration_s();
    let doppler_axis_hz = (0..m)
        .map(|d| {
            let signed = if d < m.div_ceil(2) {
                d as f64
            } else {
                d as f64 - m as f64
            };
            signed / (m as f64 * t)
        })
        .collect();
    RangeDopplerMap {
        cells,
        range_axis_m: grid.range_axis(),
        doppler_axis_hz,
        receiver: stack.receiver,
        who: stack.who,
    }
}

/// Reciprocal-filter SNR loss `(nu_-2 / N) sum |w_n|^-2` (linear).
pub fn snr_loss_closed_form(alloc: &PowerAllocation, c: &Constellation) -> f64 {
    c.nu_m2() * alloc.sum_inverse() / alloc.n() as f64
}

/// Matched-filter output SNR `N |beta|^2 / sigma^2` for one symbol.
pub fn gamma_mf_closed_form(n: usize, beta_sq: f64, noise_var: f64) -> f64 {
    n as f64 * beta_sq / noise_var
}

pub fn gamma_rf_closed_form(alloc: &PowerAllocation, c: &Constellation, beta_sq: f64, noise_var: f64) -> f64 {
    gamma_mf_closed_form(alloc.n(), beta_sq, noise_var) / snr_loss_closed_form(alloc, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub gamma_mf_db: f64,
    pub gamma_rf_db: f64,
    pub loss_db: f64,
}

impl SnrReport {
    pub fn from_linear(gamma_mf: f64, gamma_rf: f64) -> Self {
        let (mf, rf) = (linear_to_db(gamma_mf), linear_to_db(gamma_rf));
        Self {
            gamma_mf_db: mf,
            gamma_rf_db: rf,
            loss_db: mf - rf,
        }
    }
}

/// Accumulates `|E Gamma[n_t]|^2 / E|Gamma[n]|^2` over trials.
#[derive(Debug, Clone, Default)]
pub struct SnrAccumulator {
    signal_re: CompensatedSum,
    signal_im: CompensatedSum,
    signal_count: usize,
    noise: CompensatedSum,
    noise_count: usize,
}

impl SnrAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_signal(&mut self, v: Complex64) {
        self.signal_re.add(v.re);
        self.signal_im.add(v.im);
        self.signal_count += 1;
    }

    pub fn add_noise<I: IntoIterator<Item = Complex64>>(&mut self, values: I) {
        for v in values {
            self.noise.add(v.norm_sqr());
            self.noise_count += 1;
        }
    }

    pub fn merge(&mut self, other: &SnrAccumulator) {
        self.signal_re.add(other.signal_re.value());
        self.signal_im.add(other.signal_im.value());
        self.signal_count += other.signal_count;
        self.noise.add(other.noise.value());
        self.noise_count += other.noise_count;
    }

    pub fn signal_power(&self) -> f64 {
        let n = self.signal_count.max(1) as f64;
        Complex64::new(self.signal_re.value() / n, self.signal_im.value() / n).norm_sqr()
    }

    pub fn noise_power(&self) -> f64 {
        self.noise.value() / self.noise_count.max(1) as f64
    }

    pub fn snr(&self) -> f64 {
        self.signal_power() / self.noise_power()
    }
}

/// Bins usable for noise estimation: everything except the mainlobe at
/// `target_bin` and the comb peaks at multiples of `N / kappa` from it,
/// each widened by `guard` bins.
pub fn noise_bins(n: usize, target_bin: usize, kappa: usize, guard: usize) -> Vec<usize> {
    let spacing = if kappa > 1 && n.is_multiple_of(kappa) {
        n / kappa
    } else {
        n
    };
    let mut excluded = vec![false; n];
    for j in 0..n.div_ceil(spacing) {
        let centre = target_bin + j * spacing;
        for d in 0..=2 * guard {
            excluded[(centre + n + d - guard) % n] = true;
        }
    }
    (0..n).filter(|&k| !excluded[k]).collect()
}

/// Monte-Carlo estimate of Alice's MF and RF output SNR for a single
/// reflector, using `m_sym` coherently integrated symbols per trial. Each
/// filter is linear in the received signal, so the echo and noise paths
/// are filtered separately: the signal term is the mean total output at the
/// target bin and the noise term is the mean power of the filtered noise
/// over every bin.
#[allow(clippy::too_many_arguments)]
pub fn empirical_alice_snr(
    grid: &OfdmGrid,
    alloc: &PowerAllocation,
    c: &Constellation,
    target: &Reflector,
    noise_var: f64,
    trials: usize,
    seed: u64,
) -> Result<SnrReport> {
    if alloc.n() != grid.n {
        return Err(Error::LengthMismatch {
            expected: grid.n,
            got: alloc.n(),
        });
    }
    crate::scene::check_isi_region(std::slice::from_ref(target), grid)?;
    let target_bin = grid.range_to_bin(target.range_m()).round() as usize % grid.n;
    let h = channel_response(std::slice::from_ref(target), grid);
    let per_trial = par_trials(trials, seed, |_, rng| -> Result<[SnrAccumulator; 2]> {
        let s = c.draw_block(rng, grid.m_sym, grid.n);
        let x = transmit_block(alloc, &s)?;
        let mut echo = x.clone();
        for mut row in echo.rows_mut() {
            row.iter_mut().zip(&h).for_each(|(v, hn)| *v *= hn);
        }
        let noise = Array2::from_shape_fn(x.dim(), |_| complex_gaussian(rng, noise_var));
        let mut out: [SnrAccumulator; 2] = Default::default();
        for (acc, filter) in out.iter_mut().zip([matched_filter, reciprocal_filter]) {
            let sig = filter(&echo, &x)?.mean_axis(Axis(0)).expect("m_sym >= 1");
            let nse = filter(&noise, &x)?.mean_axis(Axis(0)).expect("m_sym >= 1");
            acc.add_signal(sig[target_bin] + nse[target_bin]);
            acc.add_noise(nse.iter().copied());
        }
        Ok(out)
    });
    let mut total: [SnrAccumulator; 2] = Default::default();
    for r in per_trial {
        let r = r?;
        total[0].merge(&r[0]);
        total[1].merge(&r[1]);
    }
    Ok(SnrReport::from_linear(total[0].snr(), total[1].snr()))
}
