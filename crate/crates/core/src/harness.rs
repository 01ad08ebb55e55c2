//! Experiment orchestration: one runner per evaluation figure, each
//! emitting CSV tables and a JSON manifest under
//! `out/<experiment>/<config-hash>/`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acf::{expected_sq_acf, metrics_closed_form, monte_carlo_sq_acf};
use crate::constellation::{make_constellation, Constellation};
use crate::designer::{solve_p2, tradeoff_sweep, write_tradeoff_csv, DesignRequest, DominantOffset, SolverOptions};
use crate::detection::{ca_cfar, pd_curve, write_pd_csv, CfarConfig, DetectionScenario, PdCurve};
use crate::error::{Error, Result};
use crate::estimation::{rmse_experiment, write_rmse_csv, MusicConfig, RmseReport, RmseScenario, TwoTargetSampler};
use crate::montecarlo::par_trials;
use crate::receivers::{
    empirical_alice_snr, matched_filter, noise_bins, rd_map, reciprocal_filter, snr_loss_closed_form, Chain,
    SnrAccumulator,
};
use crate::scene::{
    channel_response, eve_reference_with, sensing_snapshot_with, transmit_block, CommChannel, NlosCoherence, OfdmGrid,
    Reflector, ReflectorKind, RicianRef,
};
use crate::seed::{complex_gaussian, seeded_rng};
use crate::units::{db_to_linear, linear_to_db};
use crate::waveform::{structured_allocation, PowerAllocation, SecureAcfSpec};

pub use crate::seed::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "fig2")]
    Fig2,
    #[serde(rename = "fig4")]
    Fig4,
    #[serde(rename = "fig5")]
    Fig5,
    #[serde(rename = "fig6")]
    Fig6,
    #[serde(rename = "fig7")]
    Fig7,
    #[serde(rename = "fig8")]
    Fig8,
    #[serde(rename = "fig9")]
    Fig9,
    #[serde(rename = "fig10")]
    Fig10,
    #[serde(rename = "fig11")]
    Fig11,
    #[serde(rename = "fig1R")]
    Fig1R,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 10] = [
        ExperimentId::Fig2,
        ExperimentId::Fig4,
        ExperimentId::Fig5,
        ExperimentId::Fig6,
        ExperimentId::Fig7,
        ExperimentId::Fig8,
        ExperimentId::Fig9,
        ExperimentId::Fig10,
        ExperimentId::Fig11,
        ExperimentId::Fig1R,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Fig2 => "fig2",
            ExperimentId::Fig4 => "fig4",
            ExperimentId::Fig5 => "fig5",
            ExperimentId::Fig6 => "fig6",
            ExperimentId::Fig7 => "fig7",
            ExperimentId::Fig8 => "fig8",
            ExperimentId::Fig9 => "fig9",
            ExperimentId::Fig10 => "fig10",
            ExperimentId::Fig11 => "fig11",
            ExperimentId::Fig1R => "fig1R",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let known: Vec<&str> = ExperimentId::ALL.iter().map(|e| e.as_str()).collect();
                Error::Config(format!(
                    "unknown experiment '{s}' (expected one of {})",
                    known.join(", ")
                ))
            })
    }
}

/// Transmit waveform used by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveformSpec {
    /// Equal power on every subcarrier.
    Plain,
    /// Two-level comb with artificial-peak ratio `alpha_frac` and
    /// `num_peaks` peaks.
    Comb { alpha_frac: f64, num_peaks: usize },
    /// Optimized allocation for the given security targets.
    Design { psl_db: f64, isl_db: f64, rho: f64 },
}

impl WaveformSpec {
    pub fn id(&self) -> String {
        match self {
            WaveformSpec::Plain => "plain".into(),
            WaveformSpec::Comb { alpha_frac, num_peaks } => format!("comb_a{alpha_frac}_l{num_peaks}"),
            WaveformSpec::Design { psl_db, isl_db, rho } => format!("design_psl{psl_db}_isl{isl_db}_rho{rho}"),
        }
    }
}

/// Communication channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Flat { snr_db: f64 },
    Rayleigh { taps: usize, snr_db: f64, seed: u64 },
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec::Rayleigh {
            taps: 8,
            snr_db: 10.0,
            seed: 1,
        }
    }
}

impl ChannelSpec {
    pub fn build(&self, n: usize) -> CommChannel {
        match *self {
            ChannelSpec::Flat { snr_db } => CommChannel::flat(n, db_to_linear(snr_db)),
            ChannelSpec::Rayleigh { taps, snr_db, seed } => {
                CommChannel::rayleigh(n, taps, db_to_linear(snr_db), &mut seeded_rng(seed))
            }
        }
    }
}

/// Optional sweep axes; experiments fall back to their own defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sinr_db: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psl_db: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isl_db: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentId,
    #[serde(default)]
    pub grid: OfdmGrid,
    #[serde(default = "default_constellation")]
    pub constellation: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Waveforms under test; experiment defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveforms: Option<Vec<WaveformSpec>>,
    #[serde(default)]
    pub channel: ChannelSpec,
    /// SINR of the eavesdropper's reference signal.
    #[serde(default)]
    pub reference_sinr_db: f64,
    #[serde(default)]
    pub nlos_coherence: NlosCoherence,
    #[serde(default)]
    pub cfar: CfarConfig,
    #[serde(default)]
    pub sweep: SweepAxes,
}

fn default_constellation() -> String {
    "16QAM".into()
}

fn default_trials() -> usize {
    1000
}

impl ExperimentConfig {
    /// Evaluation defaults for `experiment`.
    pub fn defaults(experiment: ExperimentId) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            grid: OfdmGrid::default(),
            constellation: match experiment {
                ExperimentId::Fig2 => "QPSK".into(),
                _ => default_constellation(),
            },
            trials: default_trials(),
            seed: 0,
            waveforms: None,
            channel: ChannelSpec::default(),
            reference_sinr_db: 0.0,
            nlos_coherence: NlosCoherence::default(),
            cfar: CfarConfig::default(),
            sweep: SweepAxes::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.grid.validate()?;
        make_constellation(&self.constellation)?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.cfar.validate(self.grid.n)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    fn constellation(&self) -> Result<Constellation> {
        make_constellation(&self.constellation)
    }

    fn eve_link(&self) -> Result<RicianRef> {
        let mut link = RicianRef::from_sinr(db_to_linear(self.reference_sinr_db), 1.0)?;
        link.nlos_coherence = self.nlos_coherence;
        Ok(link)
    }

    fn sweep_or(&self, axis: &Option<Vec<f64>>, default: &[f64]) -> Vec<f64> {
        axis.clone().unwrap_or_else(|| default.to_vec())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style content hash: SHA-256 over `blob <len>\0<content>`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// A named CSV output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Table {
    fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            bytes,
        }
    }

    pub fn text(&self) -> &str {
        std::str::from_utf8(&self.bytes).expect("tables are UTF-8")
    }

    /// Parses the table into header and rows.
    pub fn records(&self) -> Result<(Vec<String>, Vec<Vec<String>>)> {
        let mut r = csv::Reader::from_reader(self.bytes.as_slice());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok((header, rows))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentId,
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub trials: usize,
    /// Content hash of every table, keyed by file name.
    pub tables: BTreeMap<String, String>,
    /// Hash over the sorted table hashes.
    pub content_hash: String,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub tables: Vec<Table>,
    pub manifest: Manifest,
}

/// Runs an experiment and writes its tables and manifest below `out_root`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    let tables = experiment_tables(cfg)?;
    let config_hash = cfg.hash();
    let dir = out_root.join(cfg.experiment.as_str()).join(&config_hash[..16]);
    std::fs::create_dir_all(&dir)?;
    let mut hashes = BTreeMap::new();
    for t in &tables {
        std::fs::write(dir.join(&t.name), &t.bytes)?;
        hashes.insert(t.name.clone(), content_hash(&t.bytes));
    }
    let joined: String = hashes.iter().map(|(k, v)| format!("{v}  {k}\n")).collect();
    let manifest = Manifest {
        experiment: cfg.experiment,
        schema_version: cfg.schema_version,
        config_hash,
        seed: cfg.seed,
        trials: cfg.trials,
        content_hash: content_hash(joined.as_bytes()),
        tables: hashes,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(RunOutcome { dir, tables, manifest })
}

/// Computes an experiment's tables without touching the filesystem.
pub fn experiment_tables(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentId::Fig2 => fig2(cfg),
        ExperimentId::Fig4 => fig4(cfg),
        ExperimentId::Fig5 => fig5(cfg),
        ExperimentId::Fig6 => fig6(cfg),
        ExperimentId::Fig7 => fig7(cfg),
        ExperimentId::Fig8 => fig8(cfg),
        ExperimentId::Fig9 => fig9(cfg),
        ExperimentId::Fig10 => fig10(cfg),
        ExperimentId::Fig11 => fig11(cfg),
        ExperimentId::Fig1R => fig1r(cfg),
    }
}

/// The three comb waveforms of the secure-ACF examples.
pub fn reference_combs() -> Vec<WaveformSpec> {
    [(0.75, 3), (0.5, 3), (0.25, 7)]
        .into_iter()
        .map(|(alpha_frac, num_peaks)| WaveformSpec::Comb { alpha_frac, num_peaks })
        .collect()
}

/// Resolves a waveform into an allocation for the configured grid,
/// constellation and channel.
pub fn build_waveform(spec: &WaveformSpec, cfg: &ExperimentConfig) -> Result<PowerAllocation> {
    let n = cfg.grid.n;
    match *spec {
        WaveformSpec::Plain => Ok(PowerAllocation::uniform(n)),
        WaveformSpec::Comb { alpha_frac, num_peaks } => {
            structured_allocation(&SecureAcfSpec::new(alpha_frac, num_peaks)?, n, 1)
        }
        WaveformSpec::Design { psl_db, isl_db, rho } => {
            let req = DesignRequest {
                rho,
                eps_psl: db_to_linear(psl_db),
                eps_isl: db_to_linear(isl_db),
                channel: cfg.channel.build(n),
                constellation: cfg.constellation()?,
                grid: cfg.grid,
                n0: DominantOffset::Fixed(1),
                solver: SolverOptions::default(),
            };
            Ok(solve_p2(&req)?.alloc)
        }
    }
}

fn comb_kappa(alloc: &PowerAllocation) -> usize {
    alloc.structure().map_or(1, |s| s.kappa)
}

fn csv_table(name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<Table> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(Table::new(name, bytes))
}

fn on_grid_target(grid: &OfdmGrid, bin: usize, snr_db: f64, noise_var: f64) -> Reflector {
    Reflector::with_snr(
        bin as f64 * grid.bin_width_m(),
        db_to_linear(snr_db),
        noise_var,
        ReflectorKind::Target,
    )
}

/// Monte-Carlo output SNR of the eavesdropper's MF and RF for one target.
/// Signal: mean integrated output at the target bin. Noise: mean power over
/// bins away from the mainlobe and the comb peaks.
#[allow(clippy::too_many_arguments)]
pub fn eve_output_snr(
    grid: &OfdmGrid,
    alloc: &PowerAllocation,
    c: &Constellation,
    target: &Reflector,
    noise_var: f64,
    link: &RicianRef,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let bin = grid.range_to_bin(target.range_m()).round() as usize % grid.n;
    let bins = noise_bins(grid.n, bin, comb_kappa(alloc), 1);
    let h = channel_response(std::slice::from_ref(target), grid);
    let per_trial = par_trials(trials, seed, |_, rng| -> Result<[SnrAccumulator; 2]> {
        let s = c.draw_block(rng, grid.m_sym, grid.n);
        let x = transmit_block(alloc, &s)?;
        let r = eve_reference_with(&x, link, rng);
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (v, hn) in row.iter_mut().zip(&h) {
                *v = *v * hn + complex_gaussian(rng, noise_var);
            }
        }
        let mut out: [SnrAccumulator; 2] = Default::default();
        for (acc, filter) in out.iter_mut().zip([matched_filter, reciprocal_filter]) {
            let g = filter(&y, &r)?.mean_axis(Axis(0)).expect("m_sym >= 1");
            acc.add_signal(g[bin]);
            acc.add_noise(bins.iter().map(|&k| g[k]));
        }
        Ok(out)
    });
    let mut total: [SnrAccumulator; 2] = Default::default();
    for r in per_trial {
        let r = r?;
        total[0].merge(&r[0]);
        total[1].merge(&r[1]);
    }
    Ok((total[0].snr(), total[1].snr()))
}

fn fig2(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let grid = &cfg.grid;
    let c = cfg.constellation()?;
    let alloc = PowerAllocation::uniform(grid.n);
    let target = on_grid_target(grid, 33, 0.0, 1.0);
    let sinrs = cfg.sweep_or(
        &cfg.sweep.sinr_db,
        &[-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
    );
    let mut rows = Vec::new();
    for (i, &sinr) in sinrs.iter().chain(std::iter::once(&f64::INFINITY)).enumerate() {
        let link = if sinr.is_infinite() {
            RicianRef::perfect(1.0)
        } else {
            let mut l = RicianRef::from_sinr(db_to_linear(sinr), 1.0)?;
            l.nlos_coherence = cfg.nlos_coherence;
            l
        };
        let (mf, rf) = eve_output_snr(
            grid,
            &alloc,
            &c,
            &target,
            1.0,
            &link,
            cfg.trials,
            derive_seed(cfg.seed, i as u64),
        )?;
        rows.push(vec![
            sinr.to_string(),
            linear_to_db(mf).to_string(),
            linear_to_db(rf).to_string(),
        ]);
    }
    Ok(vec![csv_table(
        "fig2.csv",
        &["sinr_db", "mf_snr_db", "rf_snr_db"],
        rows,
    )?])
}

fn fig4(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let c = cfg.constellation()?;
    let waveforms = cfg.waveforms.clone().unwrap_or_else(reference_combs);
    let mut profile_rows = Vec::new();
    let mut metric_rows = Vec::new();
    for (i, w) in waveforms.iter().enumerate() {
        let alloc = build_waveform(w, cfg)?;
        let closed = expected_sq_acf(&alloc, &c)?;
        let mc = monte_carlo_sq_acf(&alloc, &c, cfg.trials, derive_seed(cfg.seed, i as u64))?;
        for k in 0..alloc.n() {
            profile_rows.push(vec![
                w.id(),
                k.to_string(),
                (k as f64 * cfg.grid.bin_width_m()).to_string(),
                closed.squared[k].to_string(),
                mc.profile.squared[k].to_string(),
                mc.std_error[k].to_string(),
            ]);
        }
        let theory = match w {
            WaveformSpec::Comb { alpha_frac, num_peaks } => {
                Some(metrics_closed_form(&SecureAcfSpec::new(*alpha_frac, *num_peaks)?, &c))
            }
            _ => None,
        };
        metric_rows.push(vec![
            w.id(),
            theory.map_or(String::new(), |m| m.psl_db.to_string()),
            theory.map_or(String::new(), |m| m.isl_db.to_string()),
            linear_to_db(mc.profile.psl()).to_string(),
            linear_to_db(mc.profile.isl()).to_string(),
        ]);
    }
    Ok(vec![
        csv_table(
            "fig4_acf.csv",
            &[
                "waveform_id",
                "k",
                "range_m",
                "expected_sq",
                "monte_carlo_sq",
                "std_error",
            ],
            profile_rows,
        )?,
        csv_table(
            "fig4_metrics.csv",
            &["waveform_id", "psl_db", "isl_db", "psl_mc_db", "isl_mc_db"],
            metric_rows,
        )?,
    ])
}

fn fig5(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let c = cfg.constellation()?;
    let grid = OfdmGrid { m_sym: 1, ..cfg.grid };
    let waveforms = cfg.waveforms.clone().unwrap_or_else(reference_combs);
    let target = on_grid_target(&grid, 0, 0.0, 1.0);
    let mut rows = Vec::new();
    let mut profile_rows = Vec::new();
    for (i, w) in waveforms.iter().enumerate() {
        let alloc = build_waveform(w, cfg)?;
        let report = empirical_alice_snr(
            &grid,
            &alloc,
            &c,
            &target,
            1.0,
            cfg.trials,
            derive_seed(cfg.seed, i as u64),
        )?;
        rows.push(vec![
            w.id(),
            report.gamma_mf_db.to_string(),
            report.gamma_rf_db.to_string(),
            report.loss_db.to_string(),
            linear_to_db(snr_loss_closed_form(&alloc, &c)).to_string(),
        ]);
        // One integrated frame per waveform for plotting.
        let frame_grid = cfg.grid;
        let mut rng = seeded_rng(derive_seed(cfg.seed, 1000 + i as u64));
        let s = c.draw_block(&mut rng, frame_grid.m_sym, frame_grid.n);
        let x = transmit_block(&alloc, &s)?;
        let y = sensing_snapshot_with(std::slice::from_ref(&target), &frame_grid, &x, 1.0, &mut rng)?;
        for chain in [Chain::AliceMf, Chain::AliceRf] {
            let p = chain.run(&y, &x, None)?.integrate(&frame_grid);
            for (k, v) in p.bins.iter().enumerate() {
                profile_rows.push(vec![
                    w.id(),
                    chain.label().to_string(),
                    k.to_string(),
                    p.range_axis_m[k].to_string(),
                    linear_to_db(v.norm_sqr().max(1e-30)).to_string(),
                ]);
            }
        }
    }
    Ok(vec![
        csv_table(
            "fig5.csv",
            &[
                "waveform_id",
                "gamma_mf_db",
                "gamma_rf_db",
                "loss_db",
                "loss_closed_form_db",
            ],
            rows,
        )?,
        csv_table(
            "fig5_profiles.csv",
            &["waveform_id", "receiver", "bin", "range_m", "mag_db"],
            profile_rows,
        )?,
    ])
}

fn fig6(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let c = cfg.constellation()?;
    let n = cfg.grid.n;
    let kappas = cfg
        .sweep
        .kappa
        .clone()
        .unwrap_or_else(|| (1..).map(|e| 1usize << e).take_while(|&k| k <= n / 2).collect());
    let qs = cfg
        .sweep
        .q
        .clone()
        .unwrap_or_else(|| (1..20).map(|i| i as f64 * 0.05).collect());
    let rows = tradeoff_sweep(&kappas, &qs, &c, &cfg.channel.build(n), &cfg.grid)?;
    let mut buf = Vec::new();
    write_tradeoff_csv(&mut buf, &rows)?;
    Ok(vec![Table::new("fig6.csv", buf)])
}

fn fig7(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let c = cfg.constellation()?;
    let rhos = cfg.sweep_or(&cfg.sweep.rho, &(0..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>());
    let psls = cfg.sweep_or(&cfg.sweep.psl_db, &[-5.0, -5.0, -10.0]);
    let isls = cfg.sweep_or(&cfg.sweep.isl_db, &[7.0, -0.5, 3.0]);
    if psls.len() != isls.len() {
        return Err(Error::Config("fig7 needs paired psl_db and isl_db sweeps".into()));
    }
    let channel = cfg.channel.build(cfg.grid.n);
    let mut rows = Vec::new();
    for (&psl, &isl) in psls.iter().zip(&isls) {
        for &rho in &rhos {
            let req = DesignRequest {
                rho,
                eps_psl: db_to_linear(psl),
                eps_isl: db_to_linear(isl),
                channel: channel.clone(),
                constellation: c.clone(),
                grid: cfg.grid,
                n0: DominantOffset::Fixed(1),
                solver: SolverOptions::default(),
            };
            let r = solve_p2(&req)?;
            rows.push(vec![
                psl.to_string(),
                isl.to_string(),
                r.kappa.to_string(),
                rho.to_string(),
                r.predicted.rate.to_string(),
                linear_to_db(r.predicted.snr_loss).to_string(),
                linear_to_db(r.predicted.psl).to_string(),
                linear_to_db(r.predicted.isl).to_string(),
                r.objective_value.to_string(),
            ]);
        }
    }
    Ok(vec![csv_table(
        "fig7.csv",
        &[
            "psl_target_db",
            "isl_target_db",
            "kappa",
            "rho",
            "rate_bps",
            "snr_loss_db",
            "psl_db",
            "isl_db",
            "objective",
        ],
        rows,
    )?])
}

/// Five-target scene of the range-Doppler example.
pub fn five_target_scene(noise_var: f64) -> Vec<Reflector> {
    [24.0, 45.0, 100.0, 135.0, 180.0]
        .into_iter()
        .zip([0.0, -3.0, -6.0, -9.0, -12.0])
        .map(|(r, snr)| Reflector::with_snr(r, db_to_linear(snr), noise_var, ReflectorKind::Target))
        .collect()
}

fn secure_design_default() -> WaveformSpec {
    WaveformSpec::Design {
        psl_db: -5.0,
        isl_db: 7.0,
        rho: 0.0,
    }
}

fn fig8(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let c = cfg.constellation()?;
    let grid = &cfg.grid;
    let link = cfg.eve_link()?;
    let targets = five_target_scene(1.0);
    let waveforms = cfg
        .waveforms
        .clone()
        .unwrap_or_else(|| vec![WaveformSpec::Plain, secure_design_default()]);
    let mut tables = Vec::new();
    let mut summary = Vec::new();
    for (i, w) in waveforms.iter().enumerate() {
        let alloc = build_waveform(w, cfg)?;
        let mut rng = seeded_rng(derive_seed(cfg.seed, i as u64));
        let s = c.draw_block(&mut rng, grid.m_sym, grid.n);
        let x = transmit_block(&alloc, &s)?;
        let reference = eve_reference_with(&x, &link, &mut rng);
        let y_a = sensing_snapshot_with(&targets, grid, &x, 1.0, &mut rng)?;
        let y_e = sensing_snapshot_with(&targets, grid, &x, 1.0, &mut rng)?;
        for (chain, y) in [(Chain::AliceRf, &y_a), (Chain::EveMf, &y_e)] {
            let stack = chain.run(y, &x, Some(&reference))?;
            let map = rd_map(&stack, grid);
            let mut buf = Vec::new();
            map.write_csv(&mut buf)?;
            let name = format!("fig8_{}_{}.csv", chain.label(), w.id());
            tables.push(Table::new(name, buf));
            let zero = map.zero_doppler();
            let det = ca_cfar(&zero, &cfg.cfar)?;
            let bins: Vec<usize> = targets
                .iter()
                .map(|t| grid.range_to_bin(t.range_m()).round() as usize)
                .collect();
            let near = |k: usize, b: usize| circular_distance(k, b, grid.n) <= 1;
            let peaks = top_peaks(&zero.power(), targets.len());
            let in_top = bins.iter().filter(|&&b| peaks.iter().any(|&k| near(k, b))).count();
            let found = bins.iter().filter(|&&b| det.hit_near(b, 1)).count();
            let spurious = det
                .detected_bins
                .iter()
                .filter(|&&k| bins.iter().all(|&b| !near(k, b)))
                .count();
            summary.push(vec![
                chain.label().to_string(),
                w.id(),
                in_top.to_string(),
                found.to_string(),
                spurious.to_string(),
            ]);
        }
    }
    tables.push(csv_table(
        "fig8_summary.csv",
        &[
            "receiver",
            "waveform_id",
            "targets_in_top_peaks",
            "cfar_targets",
            "cfar_spurious",
        ],
        summary,
    )?);
    Ok(tables)
}

fn circular_distance(a: usize, b: usize, n: usize) -> usize {
    let d = a.abs_diff(b) % n;
    d.min(n - d)
}

/// Indices of the `count` strongest circular local maxima, strongest first.
pub fn top_peaks(power: &[f64], count: usize) -> Vec<usize> {
    let n = power.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&k| power[k] >= power[(k + n - 1) % n] && power[k] > power[(k + 1) % n])
        .collect();
    peaks.sort_by(|&a, &b| power[b].total_cmp(&power[a]));
    peaks.truncate(count);
    peaks
}

/// Clutter-plus-target detection scenario shared by the Pd experiments.
pub fn detection_scenario(cfg: &ExperimentConfig, alloc: PowerAllocation) -> Result<DetectionScenario> {
    let clutter = vec![Reflector::with_snr(
        30.0,
        db_to_linear(10.0),
        1.0,
        ReflectorKind::Clutter,
    )];
    Ok(DetectionScenario {
        grid: cfg.grid,
        constellation: cfg.constellation()?,
        alloc,
        clutter_alice: clutter.clone(),
        clutter_eve: clutter,
        target_range_m: 100.0,
        noise_var_alice: 1.0,
        noise_var_eve: 1.0,
        eve_link: cfg.eve_link()?,
        cfar: cfg.cfar,
        credit_bins: 1,
    })
}

pub fn default_detection_snr_grid() -> Vec<f64> {
    (-40..=10).map(f64::from).collect()
}

fn pd_tables(cfg: &ExperimentConfig, name: &str, jobs: &[(Chain, WaveformSpec)]) -> Result<Vec<Table>> {
    let snr = cfg.sweep_or(&cfg.sweep.snr_db, &default_detection_snr_grid());
    let mut curves: Vec<PdCurve> = Vec::new();
    let mut cache: Vec<(WaveformSpec, PowerAllocation)> = Vec::new();
    for (i, (chain, w)) in jobs.iter().enumerate() {
        let alloc = match cache.iter().find(|(s, _)| s == w) {
            Some((_, a)) => a.clone(),
            None => {
                let a = build_waveform(w, cfg)?;
                cache.push((w.clone(), a.clone()));
                a
            }
        };
        let scn = detection_scenario(cfg, alloc)?;
        curves.push(pd_curve(
            &scn,
            *chain,
            &w.id(),
            &snr,
            cfg.trials,
            derive_seed(cfg.seed, i as u64),
        )?);
    }
    let mut buf = Vec::new();
    write_pd_csv(&mut buf, &curves)?;
    let summary: Vec<Vec<String>> = curves
        .iter()
        .map(|c| {
            vec![
                c.receiver.label().to_string(),
                c.waveform_id.clone(),
                c.snr_at(0.9).map_or(String::new(), |v| v.to_string()),
            ]
        })
        .collect();
    Ok(vec![
        Table::new(format!("{name}.csv"), buf),
        csv_table(
            &format!("{name}_pd90.csv"),
            &["receiver", "waveform_id", "snr_db_at_pd90"],
            summary,
        )?,
    ])
}

fn security_ladder(cfg: &ExperimentConfig) -> Vec<WaveformSpec> {
    let isls = cfg.sweep_or(&cfg.sweep.isl_db, &[-0.5, 3.0, 7.0]);
    let psl = cfg
        .sweep
        .psl_db
        .as_ref()
        .and_then(|v| v.first().copied())
        .unwrap_or(-5.0);
    isls.into_iter()
        .map(|isl_db| WaveformSpec::Design {
            psl_db: psl,
            isl_db,
            rho: 0.0,
        })
        .collect()
}

fn fig9(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let waveforms = cfg.waveforms.clone().unwrap_or_else(|| {
        let mut w = vec![WaveformSpec::Plain];
        w.extend(security_ladder(cfg));
        w
    });
    let jobs: Vec<(Chain, WaveformSpec)> = [Chain::AliceRf, Chain::EveMf]
        .into_iter()
        .flat_map(|c| waveforms.iter().map(move |w| (c, w.clone())))
        .collect();
    pd_tables(cfg, "fig9", &jobs)
}

fn fig1r(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let waveforms = cfg
        .waveforms
        .clone()
        .unwrap_or_else(|| vec![WaveformSpec::Plain, secure_design_default()]);
    let jobs: Vec<(Chain, WaveformSpec)> = [Chain::EveMf, Chain::EveRf]
        .into_iter()
        .flat_map(|c| waveforms.iter().map(move |w| (c, w.clone())))
        .collect();
    pd_tables(cfg, "fig1R", &jobs)
}

/// Two-target estimation scenario shared by the RMSE experiments.
pub fn rmse_scenario(cfg: &ExperimentConfig, alloc: PowerAllocation) -> Result<RmseScenario> {
    Ok(RmseScenario {
        grid: cfg.grid,
        constellation: cfg.constellation()?,
        alloc,
        sampler: TwoTargetSampler::default(),
        noise_var_alice: 1.0,
        noise_var_eve: 1.0,
        eve_link: cfg.eve_link()?,
        music: MusicConfig::for_grid(&cfg.grid, 2),
    })
}

fn fig10(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let waveforms = cfg
        .waveforms
        .clone()
        .unwrap_or_else(|| vec![WaveformSpec::Plain, secure_design_default()]);
    let snrs = cfg.sweep_or(&cfg.sweep.snr_db, &[-24.0, -19.0, -14.0, -9.0, -4.0]);
    let mut tables = Vec::new();
    for (i, w) in waveforms.iter().enumerate() {
        let scn = rmse_scenario(cfg, build_waveform(w, cfg)?)?;
        let rows: Vec<(f64, RmseReport)> = snrs
            .iter()
            .enumerate()
            .map(|(j, &snr)| {
                let seed = derive_seed(derive_seed(cfg.seed, i as u64), j as u64);
                Ok((snr, rmse_experiment(&scn, snr, cfg.trials, seed)?))
            })
            .collect::<Result<_>>()?;
        let mut buf = Vec::new();
        write_rmse_csv(&mut buf, "snr_db", &rows)?;
        tables.push(Table::new(format!("fig10_{}.csv", w.id()), buf));
    }
    Ok(tables)
}

fn fig11(cfg: &ExperimentConfig) -> Result<Vec<Table>> {
    let c = cfg.constellation()?;
    let kappas = cfg.sweep.kappa.clone().unwrap_or_else(|| vec![8, 16, 32]);
    let psls = cfg.sweep_or(&cfg.sweep.psl_db, &[-15.0, -10.0, -7.0, -5.0, -3.0, -1.0]);
    let snr = cfg
        .sweep
        .snr_db
        .as_ref()
        .and_then(|v| v.first().copied())
        .unwrap_or(-14.0);
    let channel = cfg.channel.build(cfg.grid.n);
    let mut rows = Vec::new();
    for (i, &kappa) in kappas.iter().enumerate() {
        for (j, &psl) in psls.iter().enumerate() {
            let spec = SecureAcfSpec::from_psl(db_to_linear(psl), kappa)?;
            let alloc = structured_allocation(&spec, cfg.grid.n, 1)?;
            let rate = crate::scene::comm_rate(&channel, &alloc, &cfg.grid)?;
            let loss = snr_loss_closed_form(&alloc, &c);
            let scn = rmse_scenario(cfg, alloc)?;
            let seed = derive_seed(derive_seed(cfg.seed, i as u64), j as u64);
            let r = rmse_experiment(&scn, snr, cfg.trials, seed)?;
            rows.push(vec![
                kappa.to_string(),
                psl.to_string(),
                rate.to_string(),
                linear_to_db(loss).to_string(),
                r.rmse_alice_m.to_string(),
                r.rmse_eve_m.to_string(),
                r.gap_m.to_string(),
                r.gap_ci_m.to_string(),
            ]);
        }
    }
    Ok(vec![csv_table(
        "fig11.csv",
        &[
            "kappa",
            "psl_db",
            "rate_bps",
            "snr_loss_db",
            "rmse_alice_m",
            "rmse_eve_m",
            "gap_m",
            "ci",
        ],
        rows,
    )?])
}

/// Integrated per-symbol profiles of a single frame, mostly for
/// diagnostics and the CLI's `simulate` command.
pub fn simulate_frame(
    grid: &OfdmGrid,
    alloc: &PowerAllocation,
    c: &Constellation,
    reflectors: &[Reflector],
    noise_var: f64,
    link: &RicianRef,
    seed: u64,
) -> Result<Vec<(Chain, crate::receivers::ProfileStack)>> {
    let mut rng = seeded_rng(seed);
    let s: Array2<Complex64> = c.draw_block(&mut rng, grid.m_sym, grid.n);
    let x = transmit_block(alloc, &s)?;
    let reference = eve_reference_with(&x, link, &mut rng);
    let y = sensing_snapshot_with(reflectors, grid, &x, noise_var, &mut rng)?;
    Chain::ALL
        .into_iter()
        .map(|chain| Ok((chain, chain.run(&y, &x, Some(&reference))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: ExperimentId) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(experiment);
        cfg.grid = OfdmGrid::new(64, 16, 50e6, 4).unwrap();
        cfg.trials = 20;
        cfg.seed = 7;
        cfg
    }

    #[test]
    fn experiment_ids_round_trip() {
        for e in ExperimentId::ALL {
            assert_eq!(e.as_str().parse::<ExperimentId>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(serde_json::from_str::<ExperimentId>(&json).unwrap(), e);
        }
        assert!("fig3".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn config_schema_errors_name_the_location() {
        let err =
            ExperimentConfig::from_json("{\n  \"schema_version\": 1,\n  \"experiment\": \"fig4\",\n  \"trails\": 5\n}")
                .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trails") && msg.contains("line 4"), "{msg}");
        let err = ExperimentConfig::from_json(r#"{"schema_version": 9, "experiment": "fig4"}"#).unwrap_err();
        assert!(err.to_string().contains("schema_version"));
        let ok = ExperimentConfig::from_json(r#"{"schema_version": 1, "experiment": "fig1R"}"#).unwrap();
        assert_eq!(ok.trials, 1000);
        assert_eq!(ok.grid, OfdmGrid::default());
        assert_eq!(ok.constellation, "16QAM");
    }

    #[test]
    fn hash_depends_on_content() {
        let a = small(ExperimentId::Fig4);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(content_hash(b""), content_hash(b""));
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn fig4_tables_have_expected_shape() {
        let t = experiment_tables(&small(ExperimentId::Fig4)).unwrap();
        let (h, rows) = t[0].records().unwrap();
        assert_eq!(h[0], "waveform_id");
        assert_eq!(rows.len(), 3 * 64);
        let (_, m) = t[1].records().unwrap();
        assert_eq!(m.len(), 3);
        let psl: f64 = m[0][1].parse().unwrap();
        assert!((psl - -2.5).abs() < 0.01);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(ExperimentId::Fig5);
        let a = run_experiment(&cfg, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = a
            .tables
            .iter()
            .map(|t| std::fs::read(a.dir.join(&t.name)).unwrap())
            .collect();
        let b = run_experiment(&cfg, dir.path()).unwrap();
        assert_eq!(a.dir, b.dir);
        for (t, bytes) in b.tables.iter().zip(first) {
            assert_eq!(std::fs::read(b.dir.join(&t.name)).unwrap(), bytes);
        }
        assert_eq!(a.manifest.content_hash, b.manifest.content_hash);
        assert!(a.dir.ends_with(format!("fig5/{}", &cfg.hash()[..16])));
        let m: Manifest = serde_json::from_slice(&std::fs::read(a.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.config, cfg);
    }

    #[test]
    fn fig6_and_fig7_run_small() {
        let mut cfg = small(ExperimentId::Fig6);
        cfg.sweep.q = Some(vec![0.25, 0.5]);
        let t = experiment_tables(&cfg).unwrap();
        let (_, rows) = t[0].records().unwrap();
        // Anchors plus kappa in {2, 4, ..., 32} times two levels.
        assert_eq!(rows.len(), 2 + 5 * 2);
        let mut cfg = small(ExperimentId::Fig7);
        cfg.sweep.rho = Some(vec![0.0, 1.0]);
        cfg.sweep.psl_db = Some(vec![-5.0]);
        cfg.sweep.isl_db = Some(vec![3.0]);
        let t = experiment_tables(&cfg).unwrap();
        let (_, rows) = t[0].records().unwrap();
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn fig8_produces_four_maps() {
        let mut cfg = small(ExperimentId::Fig8);
        cfg.grid = OfdmGrid::new(256, 64, 50e6, 4).unwrap();
        let t = experiment_tables(&cfg).unwrap();
        assert_eq!(t.len(), 5);
        let (_, rows) = t[0].records().unwrap();
        assert_eq!(rows.len(), 256 * 4);
    }

    #[test]
    fn top_peaks_are_local_maxima() {
        let p = [5.0, 1.0, 0.5, 3.0, 2.0, 4.0, 4.5, 0.1];
        assert_eq!(top_peaks(&p, 2), vec![0, 6]);
        assert_eq!(top_peaks(&p, 5), vec![0, 6, 3]);
        assert_eq!(circular_distance(0, 7, 8), 1);
    }
}
