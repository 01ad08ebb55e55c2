//! Cell-averaging CFAR detection and detection-probability experiments.

use std::io::Write;

use ndarray::{Array1, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::montecarlo::par_trials;
use crate::receivers::{Chain, RangeProfile};
use crate::scene::{
    eve_reference_with, sensing_snapshot_with, transmit_block, OfdmGrid, Reflector, ReflectorKind, RicianRef,
};
use crate::seed::random_phase;
use crate::stats::wilson_interval;
use crate::units::db_to_linear;
use crate::waveform::PowerAllocation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfarConfig {
    /// Training cells on each side of the cell under test.
    pub train_cells: usize,
    /// Guard cells on each side of the cell under test.
    pub guard_cells: usize,
    pub pfa: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            train_cells: 16,
            guard_cells: 4,
            pfa: 1e-5,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train_cells == 0 {
            return Err(Error::Config("CFAR needs at least one training cell per side".into()));
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::Config(format!(
                "false-alarm probability {} outside (0, 1)",
                self.pfa
            )));
        }
        if n <= 2 * (self.train_cells + self.guard_cells) + 1 {
            return Err(Error::Config(format!(
                "CFAR window of {} cells does not fit a {n}-bin profile",
                2 * (self.train_cells + self.guard_cells) + 1
            )));
        }
        Ok(())
    }

    pub fn total_training(&self) -> usize {
        2 * self.train_cells
    }

    /// `T = N_t (pfa^(-1/N_t) - 1)`.
    pub fn threshold_factor(&self) -> f64 {
        let nt = self.total_training() as f64;
        nt * (self.pfa.powf(-1.0 / nt) - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub detected_bins: Vec<usize>,
    pub threshold_profile: Vec<f64>,
}

impl DetectionResult {
    /// Whether any detection lies within `tolerance` bins (circularly) of `bin`.
    pub fn hit_near(&self, bin: usize, tolerance: usize) -> bool {
        let n = self.threshold_profile.len();
        self.detected_bins.iter().any(|&k| {
            let d = (k + n - bin % n) % n;
            d.min(n - d) <= tolerance
        })
    }
}

pub fn ca_cfar(profile: &RangeProfile, cfg: &CfarConfig) -> Result<DetectionResult> {
    ca_cfar_power(&profile.power(), cfg)
}

/// CA-CFAR on cell powers with circular windowing.
pub fn ca_cfar_power(power: &[f64], cfg: &CfarConfig) -> Result<DetectionResult> {
    let n = power.len();
    cfg.validate(n)?;
    let t = cfg.threshold_factor();
    let (g, tr) = (cfg.guard_cells, cfg.train_cells);
    // Sliding sums over the circularly extended sequence.
    let mut prefix = Vec::with_capacity(3 * n + 1);
    prefix.push(0.0);
    for i in 0..3 * n {
        let last = *prefix.last().expect("non-empty");
        prefix.push(last + power[i % n]);
    }
    let window = |lo: usize, hi: usize| prefix[hi] - prefix[lo];
    let mut threshold_profile = Vec::with_capacity(n);
    let mut detected_bins = Vec::new();
    for (k, &p) in power.iter().enumerate() {
        let c = k + n;
        let lead = window(c - g - tr, c - g);
        let lag = window(c + g + 1, c + g + tr + 1);
        let th = t * (lead + lag) / cfg.total_training() as f64;
        threshold_profile.push(th);
        if p > th {
            detected_bins.push(k);
        }
    }
    Ok(DetectionResult {
        detected_bins,
        threshold_profile,
    })
}

/// Detection scenario: fixed clutter, one target of variable strength.
#[derive(Debug, Clone)]
pub struct DetectionScenario {
    pub grid: OfdmGrid,
    pub constellation: Constellation,
    pub alloc: PowerAllocation,
    /// Clutter seen by the legitimate receiver.
    pub clutter_alice: Vec<Reflector>,
    /// Clutter seen by the eavesdropper.
    pub clutter_eve: Vec<Reflector>,
    pub target_range_m: f64,
    pub noise_var_alice: f64,
    pub noise_var_eve: f64,
    pub eve_link: RicianRef,
    pub cfar: CfarConfig,
    /// Detections within this many bins of the true bin count as hits.
    pub credit_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdPoint {
    pub snr_db: f64,
    pub pd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub hits: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdCurve {
    pub receiver: Chain,
    pub waveform_id: String,
    pub points: Vec<PdPoint>,
}

impl PdCurve {
    pub fn snr_axis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.snr_db).collect()
    }

    pub fn pd_axis(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.pd).collect()
    }

    /// Interpolated SNR at which the curve first reaches `pd`.
    pub fn snr_at(&self, pd: f64) -> Option<f64> {
        crate::stats::crossing(&self.snr_axis(), &self.pd_axis(), pd)
    }

    /// Writes `snr_db, pd, ci_low, ci_high, receiver, waveform_id` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_pd_csv(out, std::slice::from_ref(self))
    }
}

pub fn write_pd_csv<W: Write>(out: W, curves: &[PdCurve]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["snr_db", "pd", "ci_low", "ci_high", "receiver", "waveform_id"])?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                p.snr_db.to_string(),
                p.pd.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
                c.receiver.label().to_string(),
                c.waveform_id.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Detection probability versus input target SNR `|beta|^2 / sigma^2`.
///
/// Every SNR point reuses the same per-trial symbols, noise, clutter and
/// reference realizations (common random numbers); only the target
/// amplitude changes. The filters are linear in the surveillance signal, so
/// the background and unit-target outputs are computed once per trial and
/// combined per SNR. CFAR runs on the coherently integrated profile.
pub fn pd_curve(
    scn: &DetectionScenario,
    chain: Chain,
    waveform_id: &str,
    snr_grid_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<PdCurve> {
    let grid = &scn.grid;
    scn.cfar.validate(grid.n)?;
    if scn.alloc.n() != grid.n {
        return Err(Error::LengthMismatch {
            expected: grid.n,
            got: scn.alloc.n(),
        });
    }
    let target_bin = grid.range_to_bin(scn.target_range_m).round() as usize % grid.n;
    let eve = chain.observer() == crate::receivers::Observer::Eve;
    let (clutter, noise_var) = if eve {
        (&scn.clutter_eve, scn.noise_var_eve)
    } else {
        (&scn.clutter_alice, scn.noise_var_alice)
    };
    let amps: Vec<f64> = snr_grid_db
        .iter()
        .map(|&db| (db_to_linear(db) * noise_var).sqrt())
        .collect();
    let hits = par_trials(trials, seed, |_, rng| -> Result<Vec<bool>> {
        let s = scn.constellation.draw_block(rng, grid.m_sym, grid.n);
        let x = transmit_block(&scn.alloc, &s)?;
        let reference = eve.then(|| eve_reference_with(&x, &scn.eve_link, rng));
        let phase = random_phase(rng);
        let unit = Reflector::at_range(scn.target_range_m, phase, ReflectorKind::Target);
        let y_bg = sensing_snapshot_with(clutter, grid, &x, noise_var, rng)?;
        let y_t = sensing_snapshot_with(&[unit], grid, &x, 0.0, rng)?;
        let integrate = |y| -> Result<Array1<Complex64>> {
            let stack = chain.run(y, &x, reference.as_ref())?;
            Ok(stack.profiles.mean_axis(Axis(0)).expect("m_sym >= 1"))
        };
        let (g_bg, g_t) = (integrate(&y_bg)?, integrate(&y_t)?);
        amps.iter()
            .map(|&a| {
                let power: Vec<f64> = g_bg.iter().zip(&g_t).map(|(b, t)| (b + t * a).norm_sqr()).collect();
                Ok(ca_cfar_power(&power, &scn.cfar)?.hit_near(target_bin, scn.credit_bins))
            })
            .collect()
    });
    let mut counts = vec![0usize; snr_grid_db.len()];
    for trial in hits {
        for (c, h) in counts.iter_mut().zip(trial?) {
            *c += h as usize;
        }
    }
    let points = snr_grid_db
        .iter()
        .zip(counts)
        .map(|(&snr_db, h)| {
            let (ci_low, ci_high) = wilson_interval(h, trials);
            PdPoint {
                snr_db,
                pd: h as f64 / trials.max(1) as f64,
                ci_low,
                ci_high,
                hits: h,
                trials,
            }
        })
        .collect();
    Ok(PdCurve {
        receiver: chain,
        waveform_id: waveform_id.to_string(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::make_constellation;
    use crate::seed::{complex_gaussian, seeded_rng};

    #[test]
    fn threshold_factor_value() {
        let cfg = CfarConfig::default();
        assert!((cfg.threshold_factor() - 13.86).abs() < 0.01);
        // Exact false-alarm probability for exponential cells.
        let nt = 32.0;
        let pfa = (1.0 + cfg.threshold_factor() / nt).powf(-nt);
        assert!((pfa - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn window_too_large_rejected() {
        let cfg = CfarConfig::default();
        assert!(matches!(ca_cfar_power(&[1.0; 41], &cfg), Err(Error::Config(_))));
        assert!(ca_cfar_power(&[1.0; 42], &cfg).is_ok());
    }

    #[test]
    fn brute_force_threshold_matches() {
        let cfg = CfarConfig {
            train_cells: 3,
            guard_cells: 1,
            pfa: 1e-3,
        };
        let mut rng = seeded_rng(4);
        let p: Vec<f64> = (0..20).map(|_| complex_gaussian(&mut rng, 1.0).norm_sqr()).collect();
        let r = ca_cfar_power(&p, &cfg).unwrap();
        for k in 0..20 {
            let mut acc = 0.0;
            for d in 2..=4 {
                acc += p[(k + d) % 20] + p[(k + 20 - d) % 20];
            }
            let th = cfg.threshold_factor() * acc / 6.0;
            assert!((r.threshold_profile[k] - th).abs() < 1e-12);
        }
    }

    #[test]
    fn false_alarm_rate_on_pure_noise() {
        let cfg = CfarConfig::default();
        let n = 256;
        let profiles = 10_000_000 / n + 1;
        let alarms: usize = par_trials(profiles, 99, |_, rng| {
            let p: Vec<f64> = (0..n).map(|_| complex_gaussian(rng, 1.0).norm_sqr()).collect();
            ca_cfar_power(&p, &cfg).unwrap().detected_bins.len()
        })
        .into_iter()
        .sum();
        let rate = alarms as f64 / (profiles * n) as f64;
        assert!((0.3e-5..=3e-5).contains(&rate), "{rate}");
    }

    #[test]
    fn strong_target_detected() {
        let mut p = vec![1.0; 256];
        p[33] = 1000.0;
        let r = ca_cfar_power(&p, &CfarConfig::default()).unwrap();
        assert_eq!(r.detected_bins, vec![33]);
        assert!(r.hit_near(34, 1));
        assert!(!r.hit_near(35, 1));
    }

    fn scenario(alloc: PowerAllocation) -> DetectionScenario {
        let grid = OfdmGrid::new(256, 64, 50e6, 8).unwrap();
        let clutter = vec![Reflector::with_snr(30.0, 10.0, 1.0, ReflectorKind::Clutter)];
        DetectionScenario {
            grid,
            constellation: make_constellation("16QAM").unwrap(),
            alloc,
            clutter_alice: clutter.clone(),
            clutter_eve: clutter,
            target_range_m: 100.0,
            noise_var_alice: 1.0,
            noise_var_eve: 1.0,
            eve_link: RicianRef::perfect(1.0),
            cfar: CfarConfig::default(),
            credit_bins: 1,
        }
    }

    #[test]
    fn pd_curve_monotone_and_deterministic() {
        let scn = scenario(PowerAllocation::uniform(256));
        let snr: Vec<f64> = (-30..=-10).step_by(4).map(f64::from).collect();
        let a = pd_curve(&scn, Chain::AliceRf, "plain", &snr, 200, 5).unwrap();
        let b = pd_curve(&scn, Chain::AliceRf, "plain", &snr, 200, 5).unwrap();
        assert_eq!(a, b);
        for w in a.points.windows(2) {
            assert!(w[1].pd >= w[0].pd);
        }
        assert!(a.points[0].pd < 0.1);
        assert_eq!(a.points.last().unwrap().pd, 1.0);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("snr_db,pd,ci_low,ci_high,receiver,waveform_id\n-30,"));
    }
}
