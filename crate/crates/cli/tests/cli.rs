use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secure-isac"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr_error(o: &Output) -> Value {
    let v: Value = serde_json::from_slice(&o.stderr).expect("stderr is JSON");
    v["error"].clone()
}

fn write_alloc(dir: &Path, name: &str, power: &[f64]) -> String {
    let doc = serde_json::json!({"n": power.len(), "power": power});
    fs::write(dir.join(name), doc.to_string()).unwrap();
    name.to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn run_dir(stdout: &Value, cwd: &Path) -> std::path::PathBuf {
    cwd.join(stdout["dir"].as_str().unwrap())
}

#[test]
fn design_picks_sixteen_peak_spacing() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["design", "--out", "d"]);
    let v = stdout_json(&o);
    assert_eq!(v["kappa"], 16);
    assert!(v["psl_db"].as_f64().unwrap() >= -5.0 - 1e-6);
    assert!(v["isl_db"].as_f64().unwrap() >= 7.0 - 1e-6);
    let design: Value = serde_json::from_slice(&fs::read(tmp.path().join("d/design.json")).unwrap()).unwrap();
    let power: Vec<f64> = serde_json::from_value(design["alloc"]["power"].clone()).unwrap();
    assert_eq!(power.len(), 256);
    assert!((power.iter().sum::<f64>() - 256.0).abs() < 1e-6);
    let rows = csv_rows(&tmp.path().join("d/predicted_metrics.csv"));
    assert_eq!(rows.len(), 4);
}

#[test]
fn flat_channel_sensing_only_design_is_symmetric() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &[
            "design",
            "--set",
            "rho=0",
            "--set",
            r#"channel={"kind":"flat","snr_db":10}"#,
            "--out",
            "d",
        ],
    );
    stdout_json(&o);
    let design: Value = serde_json::from_slice(&fs::read(tmp.path().join("d/design.json")).unwrap()).unwrap();
    let kappa = design["kappa"].as_u64().unwrap() as usize;
    let power: Vec<f64> = serde_json::from_value(design["alloc"]["power"].clone()).unwrap();
    let dom: Vec<f64> = power.iter().step_by(kappa).copied().collect();
    let comp: Vec<f64> = power
        .iter()
        .enumerate()
        .filter(|(i, _)| i % kappa != 0)
        .map(|(_, v)| *v)
        .collect();
    for set in [&dom, &comp] {
        let (lo, hi) = set
            .iter()
            .fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        assert!(hi - lo < 1e-5, "spread {}", hi - lo);
    }
}

#[test]
fn infeasible_targets_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["design", "--set", "psl_db=-40", "--set", "isl_db=20"]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr_error(&o);
    assert_eq!(e["kind"], "infeasible");
    assert_eq!(e["exit_code"], 3);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["design", "--set", "colour=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_error(&o)["message"].as_str().unwrap().contains("colour"));

    fs::write(
        tmp.path().join("old.json"),
        r#"{"schema_version": 0, "experiment": "fig4"}"#,
    )
    .unwrap();
    let o = run(tmp.path(), &["sweep", "--config", "old.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_error(&o)["message"].as_str().unwrap().contains("schema_version"));

    let o = run(tmp.path(), &["sweep"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(tmp.path(), &["reproduce", "fig3"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_error(&o)["kind"], "config");

    let o = run(tmp.path(), &["design", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn metrics_of_the_three_peak_comb() {
    let tmp = tempfile::tempdir().unwrap();
    let power: Vec<f64> = (0..256).map(|i| if i % 4 == 0 { 3.25 } else { 0.25 }).collect();
    let f = write_alloc(tmp.path(), "comb.json", &power);
    let v = stdout_json(&run(tmp.path(), &["metrics", &f]));
    assert!((v["psl_db"].as_f64().unwrap() - -2.5).abs() < 0.1, "{v}");
    assert!((v["isl_db"].as_f64().unwrap() - 4.0).abs() < 0.1, "{v}");
    assert!((v["snr_loss_db"].as_f64().unwrap() - 7.6).abs() < 0.1, "{v}");
    assert!(v["rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn metrics_of_equal_power_qpsk() {
    let tmp = tempfile::tempdir().unwrap();
    let f = write_alloc(tmp.path(), "eq.json", &[1.0; 256]);
    let v = stdout_json(&run(tmp.path(), &["metrics", &f, "--set", "constellation=QPSK"]));
    assert_eq!(v["psl_db"], "none");
    assert_eq!(v["isl_db"], "none");
    assert!(v["snr_loss_db"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn metrics_reads_design_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = stdout_json(&run(tmp.path(), &["design", "--out", "d"]));
    let m = stdout_json(&run(tmp.path(), &["metrics", "d/design.json"]));
    assert!((m["psl_db"].as_f64().unwrap() - d["psl_db"].as_f64().unwrap()).abs() < 1e-9);
    assert!((m["snr_loss_db"].as_f64().unwrap() - d["snr_loss_db"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn reproduce_fig5_gives_three_floors() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&run(
        tmp.path(),
        &["reproduce", "fig5", "--trials", "50", "--seed", "3"],
    ));
    let dir = run_dir(&v, tmp.path());
    let rows = csv_rows(&dir.join("fig5.csv"));
    assert_eq!(rows.len(), 3);
    for (row, expect) in rows.iter().zip([7.6, 4.8, 3.6]) {
        let closed: f64 = row[4].parse().unwrap();
        assert!((closed - expect).abs() < 0.1);
    }
    assert!(dir.join("manifest.json").exists());
}

#[test]
fn reproduce_fig2_table() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&run(
        tmp.path(),
        &[
            "reproduce",
            "fig2",
            "--trials",
            "4",
            "--set",
            "sweep.sinr_db=[0,20]",
            "--set",
            "grid.m_sym=4",
        ],
    ));
    let dir = run_dir(&v, tmp.path());
    let mut r = csv::Reader::from_path(dir.join("fig2.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["sinr_db", "mf_snr_db", "rf_snr_db"]);
    assert_eq!(r.records().count(), 3);
}

#[test]
fn reruns_are_byte_identical_and_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "reproduce",
        "fig4",
        "--trials",
        "10",
        "--set",
        "grid.n=128",
        "--set",
        "grid.n_cp=32",
    ];
    let a = stdout_json(&run(tmp.path(), &args));
    let b = stdout_json(&run(tmp.path(), &[&args[..], &["--out", "other"]].concat()));
    let (da, db) = (run_dir(&a, tmp.path()), run_dir(&b, tmp.path()));
    for t in ["fig4_acf.csv", "fig4_metrics.csv"] {
        assert_eq!(fs::read(da.join(t)).unwrap(), fs::read(db.join(t)).unwrap());
    }
    assert_eq!(csv_rows(&da.join("fig4_acf.csv")).len(), 3 * 128);
    assert_eq!(a["content_hash"], b["content_hash"]);
}

#[test]
fn acf_and_simulate_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&run(tmp.path(), &["acf", "--trials", "100", "--out", "a"]));
    assert!((v["psl_db"].as_f64().unwrap() - -2.5).abs() < 0.1);
    assert_eq!(csv_rows(&tmp.path().join("a/acf.csv")).len(), 256);

    let v = stdout_json(&run(
        tmp.path(),
        &["simulate", "--out", "s", "--set", "scene.grid.m_sym=4"],
    ));
    assert_eq!(v["detections"].as_array().unwrap().len(), 4);
    for chain in ["alice_mf", "alice_rf", "eve_mf", "eve_rf"] {
        assert_eq!(csv_rows(&tmp.path().join(format!("s/profile_{chain}.csv"))).len(), 256);
    }
}
