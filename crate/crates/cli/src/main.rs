mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use secure_isac::acf::{expected_sq_acf_exact, monte_carlo_sq_acf};
use secure_isac::constellation::make_constellation;
use secure_isac::designer::{predict, solve_p2, DesignRequest, DesignResult, DominantOffset, SolverOptions};
use secure_isac::detection::{ca_cfar, CfarConfig};
use secure_isac::harness::{
    build_waveform, derive_seed, run_experiment, ChannelSpec, ExperimentConfig, ExperimentId, RunOutcome, WaveformSpec,
    SCHEMA_VERSION,
};
use secure_isac::receivers::{rd_map, Chain};
use secure_isac::scene::{
    eve_reference_with, sensing_snapshot_with, transmit_block, NlosCoherence, OfdmGrid, ReflectorDoc, RicianRef,
    SceneDoc,
};
use secure_isac::seed::seeded_rng;
use secure_isac::units::{db_to_linear, linear_to_db};
use secure_isac::waveform::PowerAllocation;
use secure_isac::Error;

#[derive(Debug, Parser)]
#[command(
    name = "secure-isac",
    version,
    about = "Sensing-secure OFDM ISAC waveform design and evaluation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a configuration field, e.g. `--set grid.n=128`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the rate / SNR-loss / security design problem.
    Design,
    /// Rate, SNR loss, PSL and ISL of an allocation file.
    Metrics {
        /// Allocation JSON (or a design.json produced by `design`).
        alloc: Option<PathBuf>,
    },
    /// Expected and Monte-Carlo squared ACF of a waveform.
    Acf,
    /// Simulate one frame of both receivers over a scene.
    Simulate,
    /// Run the experiment described by `--config`.
    Sweep,
    /// Run an evaluation experiment with its default settings.
    Reproduce {
        /// fig2, fig4, fig5, fig6, fig7, fig8, fig9, fig10, fig11 or fig1R.
        experiment: String,
    },
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Config(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn kind_and_code(&self) -> (&'static str, u8) {
        match self {
            CliError::Config(_) => ("config", 2),
            CliError::Core(e) => match e {
                Error::InfeasibleSecurity(_) | Error::InfeasibleAcf { .. } | Error::Floor { .. } => ("infeasible", 3),
                Error::Solver { .. } => ("solver", 4),
                Error::Io(_) => ("io", 1),
                Error::Estimation(_) => ("estimation", 1),
                _ => ("config", 2),
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = e.kind_and_code();
            let doc = json!({"error": {"kind": kind, "exit_code": code, "message": e.message()}});
            eprintln!("{doc}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match &cli.command {
        Command::Design => cmd_design(&cli.common),
        Command::Metrics { alloc } => cmd_metrics(&cli.common, alloc.as_deref()),
        Command::Acf => cmd_acf(&cli.common),
        Command::Simulate => cmd_simulate(&cli.common),
        Command::Sweep => cmd_sweep(&cli.common),
        Command::Reproduce { experiment } => cmd_reproduce(&cli.common, experiment),
    }
}

/// Loads `--config` (or the given defaults), applies `--set` overrides and
/// decodes the result, rejecting unknown keys.
fn load_doc<T: Serialize + for<'de> Deserialize<'de>>(common: &Common, defaults: T) -> CliResult<T> {
    let mut doc = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => serde_json::to_value(defaults).map_err(Error::from)?,
    };
    overrides::apply_all(&mut doc, &common.overrides).map_err(CliError::Config)?;
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("configuration: {e}")))
}

fn check_version(v: u32) -> CliResult<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        )))
    }
}

fn reject_flag(common: &Common, command: &str) -> CliResult<()> {
    if common.seed.is_some() || common.trials.is_some() {
        return Err(CliError::Config(format!(
            "--seed and --trials do not apply to `{command}`"
        )));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(Error::from)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn print_json(value: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    );
}

/// dB value, or "none" when the linear value is zero.
fn db_or_none(linear: f64) -> Value {
    if linear > 0.0 {
        json!(linear_to_db(linear))
    } else {
        json!("none")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignDoc {
    schema_version: u32,
    rho: f64,
    psl_db: f64,
    isl_db: f64,
    #[serde(default = "default_constellation")]
    constellation: String,
    #[serde(default)]
    grid: OfdmGrid,
    #[serde(default)]
    channel: ChannelSpec,
    #[serde(default)]
    n0: DominantOffset,
    #[serde(default)]
    solver: SolverOptions,
}

fn default_constellation() -> String {
    "16QAM".into()
}

fn cmd_design(common: &Common) -> CliResult<()> {
    reject_flag(common, "design")?;
    let doc: DesignDoc = load_doc(
        common,
        DesignDoc {
            schema_version: SCHEMA_VERSION,
            rho: 0.5,
            psl_db: -5.0,
            isl_db: 7.0,
            constellation: default_constellation(),
            grid: OfdmGrid::default(),
            channel: ChannelSpec::default(),
            n0: DominantOffset::default(),
            solver: SolverOptions::default(),
        },
    )?;
    check_version(doc.schema_version)?;
    doc.grid.validate()?;
    let req = DesignRequest {
        rho: doc.rho,
        eps_psl: db_to_linear(doc.psl_db),
        eps_isl: db_to_linear(doc.isl_db),
        channel: doc.channel.build(doc.grid.n),
        constellation: make_constellation(&doc.constellation)?,
        grid: doc.grid,
        n0: doc.n0,
        solver: doc.solver,
    };
    let result = solve_p2(&req)?;
    fs::create_dir_all(&common.out)?;
    write_json(&common.out.join("design.json"), &result)?;
    let summary = design_summary(&result);
    let mut w = csv::Writer::from_path(common.out.join("predicted_metrics.csv")).map_err(Error::from)?;
    w.write_record(["metric", "value"]).map_err(Error::from)?;
    for key in ["rate_bps", "snr_loss_db", "psl_db", "isl_db"] {
        w.write_record([key, &summary[key].to_string()]).map_err(Error::from)?;
    }
    w.flush()?;
    print_json(&summary);
    Ok(())
}

fn design_summary(r: &DesignResult) -> Value {
    json!({
        "kappa": r.kappa,
        "n0": r.n0,
        "rate_bps": r.predicted.rate,
        "snr_loss_db": linear_to_db(r.predicted.snr_loss),
        "psl_db": db_or_none(r.predicted.psl),
        "isl_db": db_or_none(r.predicted.isl),
        "objective": r.objective_value,
        "iterations": r.iterations,
        "pg_norm": r.pg_norm,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsDoc {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alloc: Option<PowerAllocation>,
    #[serde(default = "default_constellation")]
    constellation: String,
    #[serde(default)]
    grid: OfdmGrid,
    #[serde(default)]
    channel: ChannelSpec,
}

fn read_alloc(path: &Path) -> CliResult<PowerAllocation> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(inner) = v.get_mut("alloc") {
        v = inner.take();
    }
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn cmd_metrics(common: &Common, alloc_path: Option<&Path>) -> CliResult<()> {
    reject_flag(common, "metrics")?;
    let doc: MetricsDoc = load_doc(
        common,
        MetricsDoc {
            schema_version: SCHEMA_VERSION,
            alloc: None,
            constellation: default_constellation(),
            grid: OfdmGrid::default(),
            channel: ChannelSpec::default(),
        },
    )?;
    check_version(doc.schema_version)?;
    let alloc = match (alloc_path, doc.alloc) {
        (Some(p), _) => read_alloc(p)?,
        (None, Some(a)) => a,
        (None, None) => return Err(CliError::Config("metrics needs an allocation file".into())),
    };
    let grid = OfdmGrid {
        n: alloc.n(),
        ..doc.grid
    };
    grid.validate()?;
    let c = make_constellation(&doc.constellation)?;
    let m = predict(&alloc, &c, &doc.channel.build(alloc.n()), &grid)?;
    let mut out = json!({
        "psl_db": db_or_none(m.psl),
        "isl_db": db_or_none(m.isl),
        "snr_loss_db": linear_to_db(m.snr_loss),
        "rate": m.rate,
    });
    if alloc.structure().is_none() {
        out["note"] =
            json!("PSL and ISL are expectations over the data symbols; single-frame sidelobes fluctuate around them");
    }
    print_json(&out);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcfDoc {
    schema_version: u32,
    #[serde(default = "default_waveform")]
    waveform: WaveformSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alloc: Option<PowerAllocation>,
    #[serde(default = "default_constellation")]
    constellation: String,
    #[serde(default)]
    grid: OfdmGrid,
    #[serde(default)]
    channel: ChannelSpec,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: u64,
}

fn default_waveform() -> WaveformSpec {
    WaveformSpec::Comb {
        alpha_frac: 0.75,
        num_peaks: 3,
    }
}

fn default_trials() -> usize {
    1000
}

/// Experiment config carrying the fields `build_waveform` reads.
fn waveform_context(grid: OfdmGrid, constellation: &str, channel: &ChannelSpec) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ExperimentId::Fig4);
    cfg.grid = grid;
    cfg.constellation = constellation.into();
    cfg.channel = channel.clone();
    cfg
}

fn cmd_acf(common: &Common) -> CliResult<()> {
    let mut doc: AcfDoc = load_doc(
        common,
        AcfDoc {
            schema_version: SCHEMA_VERSION,
            waveform: default_waveform(),
            alloc: None,
            constellation: default_constellation(),
            grid: OfdmGrid::default(),
            channel: ChannelSpec::default(),
            trials: default_trials(),
            seed: 0,
        },
    )?;
    check_version(doc.schema_version)?;
    doc.seed = common.seed.unwrap_or(doc.seed);
    doc.trials = common.trials.unwrap_or(doc.trials);
    if doc.trials == 0 {
        return Err(CliError::Config("trials must be at least 1".into()));
    }
    doc.grid.validate()?;
    let c = make_constellation(&doc.constellation)?;
    let alloc = match doc.alloc {
        Some(a) => a,
        None => build_waveform(
            &doc.waveform,
            &waveform_context(doc.grid, &doc.constellation, &doc.channel),
        )?,
    };
    let expected = expected_sq_acf_exact(&alloc, &c);
    let mc = monte_carlo_sq_acf(&alloc, &c, doc.trials, doc.seed)?;
    fs::create_dir_all(&common.out)?;
    let mut w = csv::Writer::from_path(common.out.join("acf.csv")).map_err(Error::from)?;
    w.write_record(["k", "range_m", "expected_sq", "monte_carlo_sq", "std_error"])
        .map_err(Error::from)?;
    let bw = doc.grid.bin_width_m();
    for k in 0..alloc.n() {
        w.write_record([
            k.to_string(),
            (k as f64 * bw).to_string(),
            expected.squared[k].to_string(),
            mc.profile.squared[k].to_string(),
            mc.std_error[k].to_string(),
        ])
        .map_err(Error::from)?;
    }
    w.flush()?;
    print_json(&json!({
        "psl_db": db_or_none(expected.psl()),
        "isl_db": db_or_none(expected.isl()),
        "psl_mc_db": db_or_none(mc.profile.psl()),
        "isl_mc_db": db_or_none(mc.profile.isl()),
        "trials": doc.trials,
        "table": common.out.join("acf.csv"),
    }));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateDoc {
    schema_version: u32,
    scene: SceneDoc,
    #[serde(default = "default_waveform")]
    waveform: WaveformSpec,
    #[serde(default = "default_constellation")]
    constellation: String,
    #[serde(default)]
    channel: ChannelSpec,
    #[serde(default)]
    reference_sinr_db: f64,
    #[serde(default)]
    nlos_coherence: NlosCoherence,
    #[serde(default)]
    cfar: CfarConfig,
    #[serde(default)]
    seed: u64,
}

fn default_scene() -> SceneDoc {
    let targets = [(24.0, 0.0), (45.0, -3.0), (100.0, -6.0), (135.0, -9.0), (180.0, -12.0)]
        .into_iter()
        .map(|(range_m, snr)| ReflectorDoc {
            range_m,
            snr_db: Some(snr),
            amplitude: None,
        })
        .collect();
    SceneDoc {
        targets,
        clutter: Vec::new(),
        grid: Some(OfdmGrid::default()),
        noise_var: 1.0,
        eve: None,
    }
}

fn cmd_simulate(common: &Common) -> CliResult<()> {
    if common.trials.is_some() {
        return Err(CliError::Config("--trials does not apply to `simulate`".into()));
    }
    let mut doc: SimulateDoc = load_doc(
        common,
        SimulateDoc {
            schema_version: SCHEMA_VERSION,
            scene: default_scene(),
            waveform: default_waveform(),
            constellation: default_constellation(),
            channel: ChannelSpec::default(),
            reference_sinr_db: 0.0,
            nlos_coherence: NlosCoherence::default(),
            cfar: CfarConfig::default(),
            seed: 0,
        },
    )?;
    check_version(doc.schema_version)?;
    doc.seed = common.seed.unwrap_or(doc.seed);
    let (scene, grid) = doc.scene.build()?;
    doc.cfar.validate(grid.n)?;
    let c = make_constellation(&doc.constellation)?;
    let alloc = build_waveform(&doc.waveform, &waveform_context(grid, &doc.constellation, &doc.channel))?;
    let mut link = RicianRef::from_sinr(db_to_linear(doc.reference_sinr_db), 1.0)?;
    link.nlos_coherence = doc.nlos_coherence;
    let noise_var = doc.scene.noise_var;

    let mut rng = seeded_rng(derive_seed(doc.seed, 0));
    let s = c.draw_block(&mut rng, grid.m_sym, grid.n);
    let x = transmit_block(&alloc, &s)?;
    let reference = eve_reference_with(&x, &link, &mut rng);
    let y_alice = sensing_snapshot_with(&scene.alice, &grid, &x, noise_var, &mut rng)?;
    let y_eve = sensing_snapshot_with(&scene.eve, &grid, &x, noise_var, &mut rng)?;

    fs::create_dir_all(&common.out)?;
    let mut detections = Vec::new();
    for chain in Chain::ALL {
        let y = match chain.observer() {
            secure_isac::receivers::Observer::Alice => &y_alice,
            secure_isac::receivers::Observer::Eve => &y_eve,
        };
        let stack = chain.run(y, &x, Some(&reference))?;
        let profile = stack.integrate(&grid);
        profile.write_csv(fs::File::create(
            common.out.join(format!("profile_{}.csv", chain.label())),
        )?)?;
        let map = rd_map(&stack, &grid);
        map.write_csv(fs::File::create(common.out.join(format!("rd_{}.csv", chain.label())))?)?;
        let det = ca_cfar(&profile, &doc.cfar)?;
        let ranges: Vec<f64> = det.detected_bins.iter().map(|&k| profile.range_axis_m[k]).collect();
        detections.push(json!({"receiver": chain.label(), "detections_m": ranges}));
    }
    print_json(&json!({"out": common.out, "detections": detections}));
    Ok(())
}

fn apply_run_flags(common: &Common, cfg: &mut ExperimentConfig) {
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
}

fn report_run(outcome: &RunOutcome) {
    print_json(&json!({
        "experiment": outcome.manifest.experiment,
        "dir": outcome.dir,
        "tables": outcome.manifest.tables.keys().collect::<Vec<_>>(),
        "content_hash": outcome.manifest.content_hash,
        "wall_time_s": outcome.manifest.wall_time_s,
    }));
}

fn cmd_sweep(common: &Common) -> CliResult<()> {
    if common.config.is_none() {
        return Err(CliError::Config("`sweep` needs --config".into()));
    }
    let mut cfg: ExperimentConfig = load_doc(common, ExperimentConfig::defaults(ExperimentId::Fig4))?;
    apply_run_flags(common, &mut cfg);
    cfg.validate()?;
    report_run(&run_experiment(&cfg, &common.out)?);
    Ok(())
}

fn cmd_reproduce(common: &Common, experiment: &str) -> CliResult<()> {
    let id: ExperimentId = experiment.parse()?;
    if common.config.is_some() {
        return Err(CliError::Config(
            "`reproduce` uses built-in defaults; use `sweep --config` instead".into(),
        ));
    }
    let mut cfg: ExperimentConfig = load_doc(common, ExperimentConfig::defaults(id))?;
    if cfg.experiment != id {
        return Err(CliError::Config("the experiment id cannot be overridden".into()));
    }
    apply_run_flags(common, &mut cfg);
    cfg.validate()?;
    report_run(&run_experiment(&cfg, &common.out)?);
    Ok(())
}
