use std::path::Path;
use std::process::{Command, Output};

use mesde::io::commands::FitReport;
use mesde::io::csv::{ingest_panel, panel_to_long_csv, panel_to_wide_csv, parse_wide};

fn mesde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mesde"))
        .args(args)
        .env_remove("MESDE_WORKERS")
        .env("MESDE_OUTPUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_writes_wide_panel() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesde(dir.path(), &["simulate", "--model", "model1", "-N", "4", "-T", "1", "-n", "10", "--fine-step", "0.01"]);
    ok(&out);
    let text = read(dir.path().join("panel.csv"));
    let lines: Vec<&str> = text.lines().collect();
    let header: Vec<String> = std::iter::once("id".to_string()).chain((0..=10).map(|j| format!("t{j}"))).collect();
    assert_eq!(lines[0], header.join(","));
    assert_eq!(lines.len(), 5);
    for (i, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 12);
        assert_eq!(fields[0], i.to_string());
    }
    assert!(dir.path().join("effects.csv").exists());
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path().join("metadata.json"))).unwrap();
    assert_eq!(meta["config"]["simulate"]["seed"], 0);
    assert!(meta["config"]["simulate"]["truth"].is_object());
}

#[test]
fn simulate_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--model", "model3", "-N", "5", "-T", "2", "-n", "40", "--seed", "17", "--fine-step", "0.005"];
    ok(&mesde(a.path(), &args));
    ok(&mesde(b.path(), &args));
    for f in ["panel.csv", "effects.csv", "metadata.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn metadata_reruns_simulation() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&mesde(a.path(), &["simulate", "-N", "3", "-T", "1", "-n", "20", "--seed", "4", "--fine-step", "0.005"]));
    let meta = a.path().join("metadata.json");
    ok(&mesde(b.path(), &["--config", meta.to_str().unwrap(), "simulate"]));
    assert_eq!(read(a.path().join("panel.csv")), read(b.path().join("panel.csv")));
}

#[test]
fn fine_step_must_divide_observation_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = mesde(dir.path(), &["simulate", "-N", "2", "-T", "1", "-n", "10", "--fine-step", "0.03"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("panel.csv").exists());
}

#[test]
fn malformed_panel_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("bad.csv");
    std::fs::write(&panel, "id,t0,t1,t2\n0,0.0,0.1,0.2\n1,0.0,abc,0.3\n").unwrap();
    let out = mesde(dir.path(), &["fit", "--model", "model1", "--panel", panel.to_str().unwrap(), "--step", "0.1"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3") && err.contains("column 3"), "{err}");

    std::fs::write(&panel, "id,t0,t1,t2\n0,0.0,0.1,0.2\n1,0.0,0.3\n").unwrap();
    let out = mesde(dir.path(), &["fit", "--model", "model1", "--panel", panel.to_str().unwrap(), "--step", "0.1"]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(&panel, "id,t,y\n0,0.0,1.0\n0,0.1,1.1\n0,0.25,1.2\n").unwrap();
    let out = mesde(dir.path(), &["fit", "--model", "model1", "--panel", panel.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("equally spaced"));
}

#[test]
fn ingestion_scales_and_formats_agree() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![vec![0.0, 0.125, -0.3, 1.7e-3], vec![1.0, 0.9, 0.3333333333333333, 2.5]];
    let panel = mesde::PanelData::from_rows(rows.clone(), 0.25).unwrap();
    let wide = dir.path().join("wide.csv");
    let long = dir.path().join("long.csv");
    std::fs::write(&wide, panel_to_wide_csv(&panel).unwrap()).unwrap();
    std::fs::write(&long, panel_to_long_csv(&panel).unwrap()).unwrap();

    let same = ingest_panel(&wide, 1.0, Some(0.25)).unwrap();
    assert_eq!(same, panel);
    assert_eq!(ingest_panel(&long, 1.0, None).unwrap(), panel);

    let scaled = ingest_panel(&wide, 200.0, Some(0.25)).unwrap();
    for (a, b) in scaled.rows().zip(&rows) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, 200.0 * y);
        }
    }
    assert_eq!(parse_wide(&read(&wide), 0.25).unwrap(), panel);
    assert!(ingest_panel(&wide, 1.0, None).is_err());
}

#[test]
fn fit_recovers_model1_eta() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mesde(dir.path(), &["simulate", "-N", "200", "-T", "5", "-n", "1000", "--seed", "3"]));
    let panel = dir.path().join("panel.csv");
    let out = mesde(dir.path(), &["fit", "--model", "model1", "--panel", panel.to_str().unwrap(), "--predictive", "20"]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("stage 1") && stdout.contains("stage 2"));
    let report: FitReport = serde_json::from_str(&read(dir.path().join("fit_report.json"))).unwrap();
    let (eta, se) = (report.stage1.eta_hat[0], report.stage1.se_eta[0]);
    assert!((eta - 0.5).abs() < 3.0 * se, "eta {eta} se {se}");
    assert_eq!(read(dir.path().join("tau_hat.csv")).lines().count(), 201);
    assert_eq!(read(dir.path().join("predictive.csv")).lines().count(), 21);
    assert!(dir.path().join("predictive_band.csv").exists());

    let rendered = mesde(dir.path(), &["report", dir.path().join("fit_report.json").to_str().unwrap()]);
    ok(&rendered);
    assert!(String::from_utf8_lossy(&rendered.stdout).contains("omega2"));
}

#[test]
fn neuronal_preset_runs_on_stand_in_panel() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mesde(
        dir.path(),
        &["simulate", "--model", "neuronal", "-N", "240", "-T", "0.3", "-n", "2000", "--fine-step", "0.00003", "--seed", "8"],
    ));
    let panel = dir.path().join("panel.csv");
    let out = mesde(dir.path(), &["fit", "--model", "neuronal", "--panel", panel.to_str().unwrap(), "--scale", "1"]);
    ok(&out);
    let report: FitReport = serde_json::from_str(&read(dir.path().join("fit_report.json"))).unwrap();
    assert_eq!((report.n_individuals, report.n_steps), (240, 2000));
    assert!((report.h - 0.00015).abs() < 1e-15);
    assert_eq!(report.theta_labels.len(), 3);
    assert!(report.stage1.eta_hat[0].is_finite());
}

#[test]
fn mc_smoke_force_and_workers() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["mc", "--model", "model1", "--cells", "20x1x50,30x1x100", "-R", "2", "--fine-step", "0.001", "--seed", "5"];
    let mut one = vec!["--workers", "1"];
    one.extend(args);
    let mut three = vec!["--workers", "3"];
    three.extend(args);
    ok(&mesde(a.path(), &one));
    ok(&mesde(b.path(), &three));
    for f in ["mc_table.csv", "mc.json", "mc_boxplot.csv", "mc_metadata.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let table = read(a.path().join("mc_table.csv"));
    assert_eq!(table.lines().count(), 3);

    let again = mesde(a.path(), &one);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    let mut forced = one.clone();
    forced.push("--force");
    ok(&mesde(a.path(), &forced));

    let rendered = mesde(a.path(), &["report", a.path().join("mc.json").to_str().unwrap()]);
    ok(&rendered);
    assert!(String::from_utf8_lossy(&rendered.stdout).contains("N=20 T=1 n=50"));
}

#[test]
fn unknown_model_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mesde(dir.path(), &["simulate", "--model", "model9"]).status.code(), Some(2));
}
