use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcir_core::io::{read_dataset, read_raster};
use tempfile::TempDir;

fn mcir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcir")).args(args).output().expect("spawn mcir")
}

fn ok(args: &[&str]) -> String {
    let out = mcir(args);
    assert!(
        out.status.success(),
        "mcir {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path, seed: &str) {
    ok(&[
        "simulate", "--phantom", "thorax", "--gates", "3", "--fast", "--seed", seed,
        "--power-iterations", "20", "--out", dir.to_str().unwrap(),
    ]);
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_dataset(&a, "5");
    small_dataset(&b, "5");
    let (data, manifest) = read_dataset(&a).unwrap();
    assert_eq!(data.num_gates(), 3);
    assert!(manifest.norms.is_some());
    for name in manifest.files.gates.iter().chain([&manifest.files.truth]) {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(a.join("truth.pgm").exists());
}

#[test]
fn presets_have_expected_gate_counts() {
    let tmp = TempDir::new().unwrap();
    for (preset, gates) in [("rigid", 20), ("nonrigid", 10)] {
        let dir = tmp.path().join(preset);
        ok(&["simulate", "--preset", preset, "--fast", "--power-iterations", "5", "--out", dir.to_str().unwrap()]);
        let (data, _) = read_dataset(&dir).unwrap();
        assert_eq!(data.num_gates(), gates);
        assert_eq!(data.truth.shape().rows, 64);
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(mcir(&["simulate", "--out", out]).status.code(), Some(2));
    assert_eq!(mcir(&["reconstruct", "--data", out, "--out", out, "--algo", "adam"]).status.code(), Some(2));
    assert_eq!(mcir(&["rates", "--data", out, "--kappa", "-3"]).status.code(), Some(2));
    assert_eq!(mcir(&["rates", "--data", out]).status.code(), Some(1));
}

#[test]
fn zero_epochs_give_zero_image() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "1");
    let out = tmp.path().join("recon");
    ok(&[
        "reconstruct", "--data", data.to_str().unwrap(), "--epochs", "0", "--out", out.to_str().unwrap(),
    ]);
    let x = read_raster(out.join("recon.f64")).unwrap();
    assert!(x.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn rates_table_and_json() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "2");
    let table = ok(&["rates", "--data", data.to_str().unwrap()]);
    assert!(table.contains("rate SPDHG / epoch") && table.contains("rate PDHG / epoch"));
    let json: serde_json::Value = serde_json::from_str(&ok(&["rates", "--data", data.to_str().unwrap(), "--json"])).unwrap();
    let (s, p) = (json["r_spdhg"].as_f64().unwrap(), json["r_pdhg"].as_f64().unwrap());
    assert!(s > 0.0 && s < p && p < 1.0);
    assert_eq!(json["num_gates"], 3);
}

#[test]
fn reference_then_reconstruct_logs_distance() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("data");
    small_dataset(&data, "3");
    let reference = tmp.path().join("ref");
    ok(&["reference", "--data", data.to_str().unwrap(), "--out", reference.to_str().unwrap()]);
    assert!(reference.join("x.pgm").exists());

    let recon = tmp.path().join("recon");
    let args = |algo: &'static str, saddle: &Path| {
        vec![
            "reconstruct".to_string(), "--data".into(), data.to_str().unwrap().into(), "--algo".into(), algo.into(),
            "--epochs".into(), "15".into(), "--saddle".into(), saddle.to_str().unwrap().into(),
            "--dump-state".into(), "--out".into(), recon.to_str().unwrap().into(),
        ]
    };
    let spdhg = args("spdhg", &reference);
    ok(&spdhg.iter().map(String::as_str).collect::<Vec<_>>());
    let csv = fs::read_to_string(recon.join("convergence.csv")).unwrap();
    let dists: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(dists.len(), 15);
    assert!(dists[14] < 1e-2 * dists[0], "{:e} -> {:e}", dists[0], dists[14]);
    assert!(recon.join("state").join("x.f64").exists());

    // a no-MC reference does not match a motion-compensated run
    let no_mc = tmp.path().join("ref_no_mc");
    ok(&["reference", "--data", data.to_str().unwrap(), "--no-mc", "--out", no_mc.to_str().unwrap()]);
    let mismatch = args("pdhg", &no_mc);
    assert_eq!(mcir(&mismatch.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(2));
}

#[test]
fn short_experiment_writes_everything() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("exp");
    ok(&[
        "experiment", "--preset", "nonrigid", "--fast", "--epochs", "8", "--seeds", "2", "--snapshot", "4",
        "--out", out.to_str().unwrap(),
    ]);
    for name in [
        "trajectories.csv", "summary.json", "truth.f64", "converged_mc.pgm", "converged_no_mc.f64",
        "pdhg_snapshot.f64", "spdhg_snapshot.pgm",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let rows = fs::read_to_string(out.join("trajectories.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 3 * 8);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["spdhg"].as_array().unwrap().len(), 2);
    assert_eq!(summary["pdhg"]["forward_calls"], 80);
}
