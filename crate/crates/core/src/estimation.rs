//! Root-MUSIC range estimation and RMSE experiments.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::Constellation;
use crate::dsp::ifft_in_place;
use crate::error::{Error, Result};
use crate::montecarlo::par_trials;
use crate::scene::{
    eve_reference_with, sensing_snapshot_with, transmit_block, OfdmGrid, Reflector, ReflectorKind, RicianRef,
};
use crate::seed::random_phase;
use crate::stats::Welford;
use crate::units::db_to_linear;
use crate::waveform::PowerAllocation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MusicConfig {
    pub num_sources: usize,
    pub subarray_len: usize,
    pub forward_backward: bool,
    /// Average the per-symbol estimates before forming the covariance.
    #[serde(default = "yes")]
    pub average_symbols: bool,
}

fn yes() -> bool {
    true
}

impl MusicConfig {
    /// Half-aperture subarrays with forward-backward averaging.
    pub fn for_grid(grid: &OfdmGrid, num_sources: usize) -> Self {
        Self {
            num_sources,
            subarray_len: grid.n / 2,
            forward_backward: true,
            average_symbols: true,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.subarray_len > n || self.subarray_len < 2 {
            return Err(Error::Config(format!(
                "subarray length {} must lie in 2..={n}",
                self.subarray_len
            )));
        }
        if self.num_sources == 0 || self.num_sources >= self.subarray_len {
            return Err(Error::Config(format!(
                "source count {} must lie in 1..{}",
                self.num_sources, self.subarray_len
            )));
        }
        Ok(())
    }
}

/// Spatially smoothed (optionally forward-backward) covariance of the
/// frequency-domain channel estimates, one row per snapshot.
pub fn smoothed_covariance(snapshots: &Array2<Complex64>, cfg: &MusicConfig) -> Result<DMatrix<Complex64>> {
    let (m, n) = snapshots.dim();
    cfg.validate(n)?;
    let l = cfg.subarray_len;
    let per = n - l + 1;
    let cols = m * per;
    let mut h = DMatrix::<Complex64>::zeros(l, cols);
    for (r, row) in snapshots.rows().into_iter().enumerate() {
        for i in 0..per {
            for k in 0..l {
                h[(k, r * per + i)] = row[i + k];
            }
        }
    }
    let mut cov = &h * h.adjoint() / Complex64::new(cols as f64, 0.0);
    if cfg.forward_backward {
        let flipped = DMatrix::from_fn(l, l, |i, j| cov[(l - 1 - i, l - 1 - j)].conj());
        cov = (cov + flipped) * Complex64::new(0.5, 0.0);
    }
    Ok(cov)
}

/// Coefficients of `z^(L-1) a(1/z)^T C a(z)` in ascending powers, where `C`
/// is the noise-subspace projector.
fn music_polynomial(cov: &DMatrix<Complex64>, num_sources: usize) -> Result<Vec<Complex64>> {
    let l = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !largest.is_finite() || largest <= 0.0 {
        return Err(Error::Estimation("covariance has no signal energy".into()));
    }
    if eig.eigenvalues[order[num_sources - 1]] <= largest * 1e-13 {
        return Err(Error::Estimation(format!(
            "covariance rank below the source count {num_sources}"
        )));
    }
    let mut proj = DMatrix::<Complex64>::identity(l, l);
    for &k in order.iter().take(num_sources) {
        let v = eig.eigenvectors.column(k);
        proj -= v * v.adjoint();
    }
    let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * l - 1];
    for i in 0..l {
        for j in 0..l {
            coeffs[j + l - 1 - i] += proj[(i, j)];
        }
    }
    Ok(coeffs)
}

/// Horner evaluation of `p(z)` and `p'(z)`.
fn eval_with_derivative(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn newton_root(coeffs: &[Complex64], mut z: Complex64) -> Complex64 {
    let mut last_step = f64::INFINITY;
    for _ in 0..200 {
        let (p, dp) = eval_with_derivative(coeffs, z);
        if dp.norm() == 0.0 {
            break;
        }
        let step = p / dp;
        z -= step;
        let s = step.norm();
        // Near a double root rounding stalls progress; stop once steps stop
        // shrinking.
        if s < 1e-15 * z.norm().max(1.0) || (s > 0.9 * last_step && s < 1e-6) {
            break;
        }
        last_step = s;
    }
    z
}

/// Null-spectrum `D(w) = sum_l b_l e^{j w l}` and its first two derivatives,
/// with `b` the polynomial coefficients centred at index `L - 1`.
fn spectrum_derivatives(coeffs: &[Complex64], w: f64) -> (f64, f64) {
    let centre = (coeffs.len() / 2) as f64;
    let (mut d1, mut d2) = (0.0, 0.0);
    for (m, c) in coeffs.iter().enumerate() {
        let l = m as f64 - centre;
        let e = Complex64::from_polar(1.0, w * l);
        let v = c * e;
        d1 += -(v.im) * l;
        d2 += -(v.re) * l * l;
    }
    (d1, d2)
}

fn polish_angle(coeffs: &[Complex64], mut w: f64) -> f64 {
    for _ in 0..20 {
        let (d1, d2) = spectrum_derivatives(coeffs, w);
        if d2 <= 0.0 {
            break;
        }
        let step = d1 / d2;
        w -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    w
}

/// Phase angles of the `num_sources` roots of the null-spectrum polynomial
/// nearest the unit circle.
fn root_music_angles(coeffs: &[Complex64], num_sources: usize) -> Result<Vec<f64>> {
    let l = coeffs.len().div_ceil(2);
    let g = (8 * l).next_power_of_two();
    // Null spectrum on a dense grid: local minima seed the root search.
    let mut buf = vec![Complex64::new(0.0, 0.0); g];
    for (m, c) in coeffs.iter().enumerate() {
        let lag = m as isize - (l as isize - 1);
        buf[lag.rem_euclid(g as isize) as usize] += c;
    }
    ifft_in_place(&mut buf);
    let spec: Vec<f64> = buf.iter().map(|v| v.re).collect();
    let mut minima: Vec<usize> = (0..g)
        .filter(|&k| spec[k] < spec[(k + g - 1) % g] && spec[k] <= spec[(k + 1) % g])
        .collect();
    minima.sort_by(|&a, &b| spec[a].total_cmp(&spec[b]));
    let mut roots: Vec<Complex64> = Vec::new();
    for &k in minima.iter().take((2 * num_sources).max(num_sources + 4)) {
        let start = Complex64::from_polar(1.0 - 1e-3, std::f64::consts::TAU * k as f64 / g as f64);
        let mut z = newton_root(coeffs, start);
        if !z.is_finite() || z.norm() == 0.0 {
            continue;
        }
        if z.norm() > 1.0 {
            z = 1.0 / z.conj();
        }
        if roots.iter().all(|r| (r - z).norm() > 1e-6) {
            roots.push(z);
        }
    }
    if roots.len() < num_sources {
        return Err(Error::Estimation(format!(
            "found {} candidate roots for {num_sources} sources",
            roots.len()
        )));
    }
    roots.sort_by(|a, b| (1.0 - a.norm()).total_cmp(&(1.0 - b.norm())));
    Ok(roots
        .into_iter()
        .take(num_sources)
        .map(|z| {
            // Roots on the circle are double roots whose location Newton
            // only resolves to about sqrt(eps); refine on the null spectrum.
            if 1.0 - z.norm() < 1e-6 {
                polish_angle(coeffs, z.arg())
            } else {
                z.arg()
            }
        })
        .collect())
}

/// Root-MUSIC ranges (metres, ascending) from frequency-domain channel
/// estimates `[M_sym x N]`.
pub fn root_music_ranges(estimates: &Array2<Complex64>, cfg: &MusicConfig, grid: &OfdmGrid) -> Result<Vec<f64>> {
    if estimates.ncols() != grid.n {
        return Err(Error::LengthMismatch {
            expected: grid.n,
            got: estimates.ncols(),
        });
    }
    let snapshots = if cfg.average_symbols && estimates.nrows() > 1 {
        estimates.mean_axis(Axis(0)).expect("non-empty").insert_axis(Axis(0))
    } else {
        estimates.clone()
    };
    let cov = smoothed_covariance(&snapshots, cfg)?;
    let coeffs = music_polynomial(&cov, cfg.num_sources)?;
    let angles = root_music_angles(&coeffs, cfg.num_sources)?;
    let r_max = grid.r_max();
    let mut ranges: Vec<f64> = angles
        .into_iter()
        .map(|w| {
            // h[n] ~ exp(-j 2 pi n df tau): angle = -2 pi df tau (mod 2 pi).
            let frac = (-w / std::f64::consts::TAU).rem_euclid(1.0);
            frac * r_max
        })
        .collect();
    ranges.sort_by(f64::total_cmp);
    Ok(ranges)
}

/// Circular range distance on `[0, r_max)`.
pub fn wrap_distance(a: f64, b: f64, r_max: f64) -> f64 {
    let d = (a - b).rem_euclid(r_max);
    d.min(r_max - d)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Per-target squared errors after minimum-cost assignment of estimates to
/// truths. Truths left without an estimate incur the maximum wrap distance.
pub fn matched_squared_errors(estimates: &[f64], truths: &[f64], r_max: f64) -> Vec<f64> {
    let worst = (r_max / 2.0).powi(2);
    let k = truths.len();
    if estimates.is_empty() {
        return vec![worst; k];
    }
    let mut slots: Vec<Option<f64>> = estimates.iter().copied().map(Some).collect();
    slots.resize(slots.len().max(k), None);
    let cost = |t: usize, e: Option<f64>| e.map_or(worst, |e| wrap_distance(e, truths[t], r_max).powi(2));
    let best = if slots.len() <= 6 {
        permutations(slots.len())
            .into_iter()
            .map(|p| (0..k).map(|t| cost(t, slots[p[t]])).collect::<Vec<_>>())
            .min_by(|a, b| a.iter().sum::<f64>().total_cmp(&b.iter().sum::<f64>()))
            .expect("at least one permutation")
    } else {
        let mut used = vec![false; slots.len()];
        (0..k)
            .map(|t| {
                let (j, c) = (0..slots.len())
                    .filter(|&j| !used[j])
                    .map(|j| (j, cost(t, slots[j])))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("enough slots");
                used[j] = true;
                c
            })
            .collect()
    };
    best
}

/// Two targets at random ranges with a random power gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoTargetSampler {
    pub range_min_m: f64,
    pub range_max_m: f64,
    pub min_separation_m: f64,
    pub snr_gap_db: (f64, f64),
}

impl Default for TwoTargetSampler {
    fn default() -> Self {
        Self {
            range_min_m: 15.0,
            range_max_m: 180.0,
            min_separation_m: 15.0,
            snr_gap_db: (4.0, 6.0),
        }
    }
}

impl TwoTargetSampler {
    /// Draws the two targets; the stronger one has input SNR `snr_db`.
    pub fn sample<R: Rng + ?Sized>(&self, snr_db: f64, noise_var: f64, rng: &mut R) -> [Reflector; 2] {
        let r1 = rng.random_range(self.range_min_m..=self.range_max_m);
        let r2 = loop {
            let r = rng.random_range(self.range_min_m..=self.range_max_m);
            if (r - r1).abs() >= self.min_separation_m {
                break r;
            }
        };
        let gap = rng.random_range(self.snr_gap_db.0..=self.snr_gap_db.1);
        let amp = |db: f64, rng: &mut R| random_phase(rng) * (db_to_linear(db) * noise_var).sqrt();
        [
            Reflector::at_range(r1, amp(snr_db, rng), ReflectorKind::Target),
            Reflector::at_range(r2, amp(snr_db - gap, rng), ReflectorKind::Target),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct RmseScenario {
    pub grid: OfdmGrid,
    pub constellation: Constellation,
    pub alloc: PowerAllocation,
    pub sampler: TwoTargetSampler,
    pub noise_var_alice: f64,
    pub noise_var_eve: f64,
    pub eve_link: RicianRef,
    pub music: MusicConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rmse_alice_m: f64,
    pub rmse_eve_m: f64,
    pub gap_m: f64,
    /// 95% half-width of the gap (delta method over paired trials).
    pub gap_ci_m: f64,
    /// Fraction of trials where some Eve estimate sits on a comb offset of
    /// a true target rather than on a target.
    pub eve_artificial_lock: f64,
    pub trials: usize,
}

/// Whether any estimate lies within `tol_m` of `truth + j * spacing_m`
/// (some `j != 0`, circularly) while being farther than `tol_m` from every
/// truth.
pub fn locks_to_artificial(estimates: &[f64], truths: &[f64], spacing_m: f64, r_max: f64, tol_m: f64) -> bool {
    let copies = (r_max / spacing_m).round() as usize;
    estimates.iter().any(|&e| {
        let near_truth = truths.iter().any(|&t| wrap_distance(e, t, r_max) <= tol_m);
        let near_copy = truths
            .iter()
            .any(|&t| (1..copies).any(|j| wrap_distance(e, t + j as f64 * spacing_m, r_max) <= tol_m));
        near_copy && !near_truth
    })
}

/// Monte-Carlo RMSE of Alice (reciprocal-filter estimates) and Eve
/// (matched-filter estimates) on matched trials. `snr_db` is the input SNR
/// of the stronger target.
pub fn rmse_experiment(scn: &RmseScenario, snr_db: f64, trials: usize, seed: u64) -> Result<RmseReport> {
    let grid = &scn.grid;
    scn.music.validate(grid.n)?;
    let r_max = grid.r_max();
    let spacing = scn
        .alloc
        .structure()
        .filter(|s| s.kappa > 1)
        .map(|s| r_max / s.kappa as f64);
    let per_trial = par_trials(trials, seed, |_, rng| -> Result<(f64, f64, bool)> {
        let targets = scn.sampler.sample(snr_db, scn.noise_var_alice, rng);
        let truths: Vec<f64> = targets.iter().map(Reflector::range_m).collect();
        let s = scn.constellation.draw_block(rng, grid.m_sym, grid.n);
        let x = transmit_block(&scn.alloc, &s)?;
        let reference = eve_reference_with(&x, &scn.eve_link, rng);
        let mut eve_targets = targets;
        let scale = (scn.noise_var_eve / scn.noise_var_alice).sqrt();
        eve_targets.iter_mut().for_each(|t| t.amplitude *= scale);
        let y_a = sensing_snapshot_with(&targets, grid, &x, scn.noise_var_alice, rng)?;
        let y_e = sensing_snapshot_with(&eve_targets, grid, &x, scn.noise_var_eve, rng)?;
        let mut est_a = y_a;
        est_a.zip_mut_with(&x, |v, r| *v /= r);
        let mut est_e = y_e;
        est_e.zip_mut_with(&reference, |v, r| *v *= r.conj());
        let ranges = |est: &Array2<Complex64>| root_music_ranges(est, &scn.music, grid).unwrap_or_default();
        let (ra, re) = (ranges(&est_a), ranges(&est_e));
        let mse = |r: &[f64]| {
            let e = matched_squared_errors(r, &truths, r_max);
            e.iter().sum::<f64>() / e.len() as f64
        };
        let lock = spacing.is_some_and(|sp| locks_to_artificial(&re, &truths, sp, r_max, grid.bin_width_m()));
        Ok((mse(&ra), mse(&re), lock))
    });
    let (mut wa, mut we, mut wd) = (Welford::default(), Welford::default(), Welford::default());
    let mut locks = 0usize;
    let mut pairs = Vec::with_capacity(trials);
    for r in per_trial {
        let (a, e, lock) = r?;
        wa.push(a);
        we.push(e);
        pairs.push((a, e));
        locks += lock as usize;
    }
    let (ma, me) = (wa.mean(), we.mean());
    let (rmse_a, rmse_e) = (ma.sqrt(), me.sqrt());
    // Delta method: d(sqrt m) = dm / (2 sqrt m), applied to paired trials.
    let ga = if rmse_a > 0.0 { 0.5 / rmse_a } else { 0.0 };
    let ge = if rmse_e > 0.0 { 0.5 / rmse_e } else { 0.0 };
    for (a, e) in &pairs {
        wd.push(ge * (e - me) - ga * (a - ma));
    }
    let n = trials.max(1) as f64;
    let gap_ci = 1.96 * (wd.variance() / n).sqrt();
    Ok(RmseReport {
        rmse_alice_m: rmse_a,
        rmse_eve_m: rmse_e,
        gap_m: rmse_e - rmse_a,
        gap_ci_m: if gap_ci.is_finite() { gap_ci } else { 0.0 },
        eve_artificial_lock: locks as f64 / n,
        trials,
    })
}

/// Writes `<axis>, rmse_alice_m, rmse_eve_m, gap_m, ci` rows; `axis_name`
/// is typically `snr_db` or `psl_db`.
pub fn write_rmse_csv<W: Write>(out: W, axis_name: &str, rows: &[(f64, RmseReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([axis_name, "rmse_alice_m", "rmse_eve_m", "gap_m", "ci"])?;
    for (x, r) in rows {
        w.write_record([
            x.to_string(),
            r.rmse_alice_m.to_string(),
            r.rmse_eve_m.to_string(),
            r.gap_m.to_string(),
            r.gap_ci_m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::make_constellation;
    use crate::scene::channel_response;
    use crate::seed::seeded_rng;

    fn on_grid(g: &OfdmGrid, bin: f64, amp: Complex64) -> Reflector {
        Reflector::at_range(bin * g.bin_width_m(), amp, ReflectorKind::Target)
    }

    #[test]
    fn noiseless_two_targets_exact() {
        let g = OfdmGrid::new(64, 16, 50e6, 1).unwrap();
        let cfg = MusicConfig::for_grid(&g, 2);
        let t = [
            on_grid(&g, 5.0, Complex64::new(1.0, 0.0)),
            on_grid(&g, 12.0, Complex64::new(0.3, -0.4)),
        ];
        let h = channel_response(&t, &g);
        let est = Array2::from_shape_vec((1, 64), h).unwrap();
        let r = root_music_ranges(&est, &cfg, &g).unwrap();
        assert!((r[0] - 15.0).abs() < 1e-6, "{r:?}");
        assert!((r[1] - 36.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn noiseless_off_grid_target_recovered() {
        let g = OfdmGrid::default();
        let cfg = MusicConfig {
            num_sources: 1,
            subarray_len: 32,
            forward_backward: false,
            average_symbols: true,
        };
        let t = [Reflector::at_range(
            100.0,
            Complex64::new(0.0, 2.0),
            ReflectorKind::Target,
        )];
        let est = Array2::from_shape_vec((1, 256), channel_response(&t, &g)).unwrap();
        let r = root_music_ranges(&est, &cfg, &g).unwrap();
        assert!((r[0] - 100.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn zero_data_is_an_estimation_error() {
        let g = OfdmGrid::new(32, 8, 50e6, 1).unwrap();
        let est = Array2::zeros((1, 32));
        assert!(matches!(
            root_music_ranges(&est, &MusicConfig::for_grid(&g, 1), &g),
            Err(Error::Estimation(_))
        ));
        let bad = MusicConfig {
            num_sources: 16,
            ..MusicConfig::for_grid(&g, 1)
        };
        assert!(matches!(root_music_ranges(&est, &bad, &g), Err(Error::Config(_))));
    }

    #[test]
    fn single_target_rmse_below_bin_width() {
        // Ten symbols per trial; 10 dB per-subcarrier SNR after averaging.
        let g = OfdmGrid::new(64, 16, 50e6, 10).unwrap();
        let cfg = MusicConfig::for_grid(&g, 1);
        let per_snr = db_to_linear(10.0) / 10.0;
        let errs = par_trials(1000, 3, |_, rng| {
            let r = rng.random_range(10.0..40.0);
            let t = [Reflector::at_range(
                r,
                random_phase(rng) * per_snr.sqrt(),
                ReflectorKind::Target,
            )];
            let h = channel_response(&t, &g);
            let est = Array2::from_shape_fn((10, 64), |(_, n)| h[n] + crate::seed::complex_gaussian(rng, 1.0));
            let e = root_music_ranges(&est, &cfg, &g).unwrap();
            wrap_distance(e[0], r, g.r_max()).powi(2)
        });
        let rmse = (errs.iter().sum::<f64>() / 1000.0).sqrt();
        let mut sorted = errs.clone();
        sorted.sort_by(f64::total_cmp);
        eprintln!("{:?}", &sorted[980..]);
        eprintln!("{}", sorted.iter().filter(|e| **e > 9.0).count());
        assert!(rmse < g.bin_width_m(), "{rmse}");
    }

    #[test]
    fn matching_uses_best_assignment_and_penalizes_misses() {
        let e = matched_squared_errors(&[50.0, 10.0], &[12.0, 49.0], 768.0);
        assert_eq!(e, vec![4.0, 1.0]);
        let e = matched_squared_errors(&[760.0], &[2.0, 100.0], 768.0);
        assert_eq!(e, vec![100.0, 384.0 * 384.0]);
        assert_eq!(wrap_distance(1.0, 767.0, 768.0), 2.0);
    }

    #[test]
    fn artificial_lock_detection() {
        assert!(locks_to_artificial(&[100.0, 148.0], &[100.0, 60.0], 48.0, 768.0, 3.0));
        assert!(!locks_to_artificial(&[100.0, 61.0], &[100.0, 60.0], 48.0, 768.0, 3.0));
    }

    #[test]
    fn symmetric_pipelines_have_no_gap() {
        let grid = OfdmGrid::new(64, 16, 50e6, 4).unwrap();
        let scn = RmseScenario {
            grid,
            constellation: make_constellation("QPSK").unwrap(),
            alloc: PowerAllocation::uniform(64),
            sampler: TwoTargetSampler {
                range_min_m: 9.0,
                range_max_m: 45.0,
                min_separation_m: 12.0,
                snr_gap_db: (4.0, 6.0),
            },
            noise_var_alice: 1.0,
            noise_var_eve: 1.0,
            eve_link: RicianRef::perfect(1.0),
            music: MusicConfig::for_grid(&grid, 2),
        };
        let r = rmse_experiment(&scn, 0.0, 100, 8).unwrap();
        assert!(r.gap_m.abs() < 0.05, "{r:?}");
        let r2 = rmse_experiment(&scn, 0.0, 100, 8).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn sampler_respects_geometry() {
        let s = TwoTargetSampler::default();
        let mut rng = seeded_rng(1);
        for _ in 0..1000 {
            let [a, b] = s.sample(10.0, 2.0, &mut rng);
            assert!((a.range_m() - b.range_m()).abs() >= 15.0 - 1e-9);
            assert!((a.amplitude.norm_sqr() - 20.0).abs() < 1e-9);
            let gap = 10.0 * (a.amplitude.norm_sqr() / b.amplitude.norm_sqr()).log10();
            assert!((4.0 - 1e-9..=6.0 + 1e-9).contains(&gap));
        }
    }
}
