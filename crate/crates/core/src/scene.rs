//! Radar scenes, OFDM grid constants, propagation to both sensing receivers,
//! the eavesdropper's Rician reference link and the communication channel.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{complex_gaussian, seeded_rng};
use crate::units::db_to_linear;
use crate::waveform::PowerAllocation;

/// Propagation speed used for every range/delay conversion. The rounded
/// value makes the standard grid land on exact range constants
/// (768 m unambiguous range at 256 subcarriers and 50 MHz).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmGrid {
    pub n: usize,
    pub n_cp: usize,
    pub bandwidth_hz: f64,
    pub m_sym: usize,
}

impl Default for OfdmGrid {
    fn default() -> Self {
        Self {
            n: 256,
            n_cp: 64,
            bandwidth_hz: 50e6,
            m_sym: 32,
        }
    }
}

impl OfdmGrid {
    pub fn new(n: usize, n_cp: usize, bandwidth_hz: f64, m_sym: usize) -> Result<Self> {
        let g = Self {
            n,
            n_cp,
            bandwidth_hz,
            m_sym,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m_sym == 0 {
            return Err(Error::Config("grid needs n >= 1 and m_sym >= 1".into()));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth {} Hz is not positive",
                self.bandwidth_hz
            )));
        }
        if self.n_cp > self.n {
            return Err(Error::Config(format!("CP length {} exceeds N = {}", self.n_cp, self.n)));
        }
        Ok(())
    }

    pub fn delta_f(&self) -> f64 {
        self.bandwidth_hz / self.n as f64
    }

    /// Range resolution `c / 2B`.
    pub fn bin_width_m(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)
    }

    /// Maximum unambiguous range `c N / 2B`.
    pub fn r_max(&self) -> f64 {
        SPEED_OF_LIGHT * self.n as f64 / (2.0 * self.bandwidth_hz)
    }

    /// ISI-free range `c N_cp / 2B`.
    pub fn r_max_cp(&self) -> f64 {
        SPEED_OF_LIGHT * self.n_cp as f64 / (2.0 * self.bandwidth_hz)
    }

    /// OFDM symbol duration including the cyclic prefix.
    pub fn symbol_duration_s(&self) -> f64 {
        (self.n + self.n_cp) as f64 / self.bandwidth_hz
    }

    pub fn range_axis(&self) -> Vec<f64> {
        (0..self.n).map(|k| k as f64 * self.bin_width_m()).collect()
    }

    /// Fractional range bin of a monostatic range.
    pub fn range_to_bin(&self, range_m: f64) -> f64 {
        range_m / self.bin_width_m()
    }
}

pub fn range_to_delay(range_m: f64) -> f64 {
    2.0 * range_m / SPEED_OF_LIGHT
}

pub fn delay_to_range(delay_s: f64) -> f64 {
    delay_s * SPEED_OF_LIGHT / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectorKind {
    Target,
    Clutter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub amplitude: Complex64,
    pub delay_s: f64,
    pub kind: ReflectorKind,
}

impl Reflector {
    pub fn at_range(range_m: f64, amplitude: Complex64, kind: ReflectorKind) -> Self {
        Self {
            amplitude,
            delay_s: range_to_delay(range_m),
            kind,
        }
    }

    /// Reflector whose input SNR is `snr_linear` against noise `noise_var`.
    pub fn with_snr(range_m: f64, snr_linear: f64, noise_var: f64, kind: ReflectorKind) -> Self {
        Self::at_range(range_m, Complex64::new((snr_linear * noise_var).sqrt(), 0.0), kind)
    }

    pub fn range_m(&self) -> f64 {
        delay_to_range(self.delay_s)
    }
}

/// Reflectors as seen by the legitimate receiver and by the eavesdropper.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadarScene {
    pub alice: Vec<Reflector>,
    pub eve: Vec<Reflector>,
}

impl RadarScene {
    /// Same geometry for both receivers.
    pub fn shared(reflectors: Vec<Reflector>) -> Self {
        Self {
            alice: reflectors.clone(),
            eve: reflectors,
        }
    }

    pub fn validate(&self, grid: &OfdmGrid) -> Result<()> {
        check_isi_region(&self.alice, grid)?;
        check_isi_region(&self.eve, grid)
    }
}

pub fn check_isi_region(reflectors: &[Reflector], grid: &OfdmGrid) -> Result<()> {
    let limit = grid.r_max_cp();
    for r in reflectors {
        if r.delay_s < 0.0 || !r.delay_s.is_finite() {
            return Err(Error::Config(format!("reflector delay {} s is invalid", r.delay_s)));
        }
        let range = r.range_m();
        if range > limit * (1.0 + 1e-12) {
            return Err(Error::IsiRegion {
                range_m: range,
                limit_m: limit,
            });
        }
    }
    Ok(())
}

/// Range steering vector `r[n] = e^{-j 2 pi n df tau}`.
pub fn steering(delay_s: f64, grid: &OfdmGrid) -> Vec<Complex64> {
    let w = -std::f64::consts::TAU * grid.delta_f() * delay_s;
    (0..grid.n).map(|n| Complex64::from_polar(1.0, w * n as f64)).collect()
}

/// Sensing channel `h = sum_i beta_i r(tau_i)`.
pub fn channel_response(reflectors: &[Reflector], grid: &OfdmGrid) -> Vec<Complex64> {
    let mut h = vec![Complex64::new(0.0, 0.0); grid.n];
    for r in reflectors {
        for (acc, v) in h.iter_mut().zip(steering(r.delay_s, grid)) {
            *acc += r.amplitude * v;
        }
    }
    h
}

/// Frequency-domain transmit block `x = w (.) s`, row per OFDM symbol.
pub fn transmit_block(alloc: &PowerAllocation, symbols: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    if symbols.ncols() != alloc.n() {
        return Err(Error::LengthMismatch {
            expected: alloc.n(),
            got: symbols.ncols(),
        });
    }
    let amp = alloc.amplitudes();
    let mut x = symbols.clone();
    for mut row in x.rows_mut() {
        row.iter_mut().zip(&amp).for_each(|(v, a)| *v *= *a);
    }
    Ok(x)
}

/// Received sensing block `y_m = h (.) x_m + z_m`.
pub fn sensing_snapshot_with<R: Rng + ?Sized>(
    reflectors: &[Reflector],
    grid: &OfdmGrid,
    x: &Array2<Complex64>,
    noise_var: f64,
    rng: &mut R,
) -> Result<Array2<Complex64>> {
    check_isi_region(reflectors, grid)?;
    if x.ncols() != grid.n {
        return Err(Error::LengthMismatch {
            expected: grid.n,
            got: x.ncols(),
        });
    }
    let h = channel_response(reflectors, grid);
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        for (v, hn) in row.iter_mut().zip(&h) {
            *v *= hn;
            if noise_var > 0.0 {
                *v += complex_gaussian(rng, noise_var);
            }
        }
    }
    Ok(y)
}

/// Seeded form of [`sensing_snapshot_with`] taking the allocation and
/// symbols directly.
pub fn sensing_snapshot(
    reflectors: &[Reflector],
    grid: &OfdmGrid,
    alloc: &PowerAllocation,
    symbols: &Array2<Complex64>,
    noise_var: f64,
    seed: u64,
) -> Result<Array2<Complex64>> {
    let x = transmit_block(alloc, symbols)?;
    sensing_snapshot_with(reflectors, grid, &x, noise_var, &mut seeded_rng(seed))
}

/// How often the eavesdropper's NLoS reference component is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlosCoherence {
    PerSymbol,
    #[default]
    PerFrame,
}

/// Rician reference link of the eavesdropper after known-LoS removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RicianRef {
    pub k_factor: f64,
    pub gain: f64,
    pub noise_var: f64,
    #[serde(default)]
    pub nlos_coherence: NlosCoherence,
}

impl RicianRef {
    /// Noiseless pure-LoS reference.
    pub fn perfect(gain: f64) -> Self {
        Self {
            k_factor: f64::INFINITY,
            gain,
            noise_var: 0.0,
            nlos_coherence: NlosCoherence::PerFrame,
        }
    }

    /// Reference with the given SINR where NLoS interference and receiver
    /// noise carry equal power, i.e. `K = 2 SINR` and
    /// `noise_var = gain / (K + 1)`.
    pub fn from_sinr(sinr: f64, gain: f64) -> Result<Self> {
        if !(sinr > 0.0 && sinr.is_finite() && gain > 0.0) {
            return Err(Error::Config(format!(
                "reference SINR {sinr} / gain {gain} must be positive"
            )));
        }
        let k = 2.0 * sinr;
        Ok(Self {
            k_factor: k,
            gain,
            noise_var: gain / (k + 1.0),
            nlos_coherence: NlosCoherence::PerFrame,
        })
    }

    /// Amplitude of the deterministic (LoS) term.
    pub fn los_coeff(&self) -> f64 {
        if self.k_factor.is_infinite() {
            self.gain.sqrt()
        } else {
            (self.gain * self.k_factor / (self.k_factor + 1.0)).sqrt()
        }
    }

    /// Amplitude of the NLoS term.
    pub fn nlos_coeff(&self) -> f64 {
        if self.k_factor.is_infinite() {
            0.0
        } else {
            (self.gain / (self.k_factor + 1.0)).sqrt()
        }
    }

    /// LoS power fraction `K / (K + 1)`.
    pub fn los_fraction(&self) -> f64 {
        if self.k_factor.is_infinite() {
            1.0
        } else {
            self.k_factor / (self.k_factor + 1.0)
        }
    }

    /// `(g K / (K + 1)) / (g / (K + 1) + noise_var)` for unit-power signals.
    pub fn sinr(&self) -> f64 {
        let s = self.los_coeff().powi(2);
        let i = self.nlos_coeff().powi(2) + self.noise_var;
        if i == 0.0 {
            f64::INFINITY
        } else {
            s / i
        }
    }
}

/// Eavesdropper reference block
/// `sqrt(gK/(K+1)) x + sqrt(g/(K+1)) h_nlos (.) x + z`.
pub fn eve_reference_with<R: Rng + ?Sized>(x: &Array2<Complex64>, link: &RicianRef, rng: &mut R) -> Array2<Complex64> {
    let (a, b) = (link.los_coeff(), link.nlos_coeff());
    let n = x.ncols();
    let mut nlos: Vec<Complex64> = if b > 0.0 {
        (0..n).map(|_| complex_gaussian(rng, 1.0)).collect()
    } else {
        vec![Complex64::new(0.0, 0.0); n]
    };
    let mut out = x.clone();
    for (m, mut row) in out.rows_mut().into_iter().enumerate() {
        if m > 0 && b > 0.0 && link.nlos_coherence == NlosCoherence::PerSymbol {
            nlos.iter_mut().for_each(|h| *h = complex_gaussian(rng, 1.0));
        }
        for (v, h) in row.iter_mut().zip(&nlos) {
            let xv = *v;
            *v = xv * a + xv * h * b;
            if link.noise_var > 0.0 {
                *v += complex_gaussian(rng, link.noise_var);
            }
        }
    }
    out
}

pub fn eve_reference(
    alloc: &PowerAllocation,
    symbols: &Array2<Complex64>,
    link: &RicianRef,
    seed: u64,
) -> Result<Array2<Complex64>> {
    let x = transmit_block(alloc, symbols)?;
    Ok(eve_reference_with(&x, link, &mut seeded_rng(seed)))
}

/// Downlink channel of the typical communication user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommChannel {
    pub gains: Vec<Complex64>,
    pub noise_var: f64,
}

impl CommChannel {
    /// Frequency-flat channel with per-subcarrier SNR `snr` (linear).
    pub fn flat(n: usize, snr: f64) -> Self {
        Self {
            gains: vec![Complex64::new(snr.sqrt(), 0.0); n],
            noise_var: 1.0,
        }
    }

    /// Frequency-selective Rayleigh channel from `taps` equal-power
    /// time-domain taps; the average per-subcarrier SNR is `avg_snr`.
    pub fn rayleigh<R: Rng + ?Sized>(n: usize, taps: usize, avg_snr: f64, rng: &mut R) -> Self {
        let taps = taps.clamp(1, n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in buf.iter_mut().take(taps) {
            *t = complex_gaussian(rng, avg_snr / taps as f64);
        }
        crate::dsp::fft_in_place(&mut buf);
        Self {
            gains: buf,
            noise_var: 1.0,
        }
    }

    /// Per-subcarrier SNR gains `|h_i|^2 / sigma_c^2`.
    pub fn snr_gains(&self) -> Vec<f64> {
        self.gains.iter().map(|h| h.norm_sqr() / self.noise_var).collect()
    }
}

/// Achievable rate `(B/N) sum log2(1 + |h_i|^2 |w_i|^2 / sigma_c^2)` in bit/s.
pub fn comm_rate(ch: &CommChannel, alloc: &PowerAllocation, grid: &OfdmGrid) -> Result<f64> {
    if ch.gains.len() != alloc.n() {
        return Err(Error::LengthMismatch {
            expected: alloc.n(),
            got: ch.gains.len(),
        });
    }
    Ok(rate_from_gains(&ch.snr_gains(), alloc.power(), grid.bandwidth_hz))
}

pub fn rate_from_gains(snr_gains: &[f64], power: &[f64], bandwidth_hz: f64) -> f64 {
    let n = power.len() as f64;
    let bits = crate::stats::compensated_sum(snr_gains.iter().zip(power).map(|(g, p)| (1.0 + g * p).log2()));
    bandwidth_hz / n * bits
}

// ---------------------------------------------------------------------------
// Scene files

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorDoc {
    pub range_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// `[re, im]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorSetDoc {
    #[serde(default)]
    pub targets: Vec<ReflectorDoc>,
    #[serde(default)]
    pub clutter: Vec<ReflectorDoc>,
}

/// On-disk scene: `{targets, clutter, grid, noise_var, eve}`. When `eve` is
/// absent the eavesdropper observes the same geometry as the legitimate
/// receiver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDoc {
    #[serde(default)]
    pub targets: Vec<ReflectorDoc>,
    #[serde(default)]
    pub clutter: Vec<ReflectorDoc>,
    #[serde(default)]
    pub grid: Option<OfdmGrid>,
    #[serde(default = "one")]
    pub noise_var: f64,
    #[serde(default)]
    pub eve: Option<ReflectorSetDoc>,
}

fn one() -> f64 {
    1.0
}

impl ReflectorDoc {
    fn to_reflector(&self, noise_var: f64, kind: ReflectorKind) -> Result<Reflector> {
        let amp = match (self.snr_db, self.amplitude) {
            (Some(db), None) => Complex64::new((db_to_linear(db) * noise_var).sqrt(), 0.0),
            (None, Some([re, im])) => Complex64::new(re, im),
            _ => {
                return Err(Error::Config(format!(
                    "reflector at {} m needs exactly one of snr_db or amplitude",
                    self.range_m
                )))
            }
        };
        if self.range_m.is_nan() || self.range_m < 0.0 {
            return Err(Error::Config(format!("range {} m must be non-negative", self.range_m)));
        }
        Ok(Reflector::at_range(self.range_m, amp, kind))
    }
}

fn convert_set(targets: &[ReflectorDoc], clutter: &[ReflectorDoc], noise_var: f64) -> Result<Vec<Reflector>> {
    targets
        .iter()
        .map(|d| d.to_reflector(noise_var, ReflectorKind::Target))
        .chain(
            clutter
                .iter()
                .map(|d| d.to_reflector(noise_var, ReflectorKind::Clutter)),
        )
        .collect()
}

impl SceneDoc {
    /// Converts to a validated scene and grid (`grid` falls back to the
    /// default 256-subcarrier, 50 MHz layout).
    pub fn build(&self) -> Result<(RadarScene, OfdmGrid)> {
        let grid = self.grid.unwrap_or_default();
        grid.validate()?;
        let alice = convert_set(&self.targets, &self.clutter, self.noise_var)?;
        let eve = match &self.eve {
            Some(e) => convert_set(&e.targets, &e.clutter, self.noise_var)?,
            None => alice.clone(),
        };
        let scene = RadarScene { alice, eve };
        scene.validate(&grid)?;
        Ok((scene, grid))
    }
}
