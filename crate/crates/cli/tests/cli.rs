use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn btcm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btcm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Data rows of a CSV file, split into cells.
fn rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn checksums(dir: &Path) -> Vec<(String, String)> {
    manifest(dir)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| (o["path"].as_str().unwrap().into(), o["sha256"].as_str().unwrap().into()))
        .collect()
}

#[test]
fn single_spin_spectrum_without_drive() {
    let dir = tempfile::tempdir().unwrap();
    let o = btcm(&["spectrum", "--n", "1", "--omega", "0"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = rows(&dir.path().join("eigenvalues_N1.csv"));
    assert_eq!(r.len(), 4);
    let re: Vec<f64> = r.iter().map(|c| c[1].parse().unwrap()).collect();
    for (got, want) in re.iter().zip([0.0, -1.0, -1.0, -2.0]) {
        assert!((got - want).abs() < 1e-12, "{re:?}");
    }
}

#[test]
fn invalid_kappa_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    for k in ["0", "-1"] {
        let o = btcm(&["spectrum", "--kappa", k], dir.path());
        assert_eq!(code(&o), 2);
        assert!(String::from_utf8_lossy(&o.stderr).contains("kappa"));
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["monitoring", "--n", "1", "--horizon", "2", "--n-traj", "8", "--seed", "5", "--eta", "0.5"];
    assert_eq!(code(&btcm(&args, a.path())), 0);
    assert_eq!(code(&btcm(&args, b.path())), 0);
    assert_eq!(checksums(a.path()), checksums(b.path()));

    // The persisted config reproduces the run.
    let c = tempfile::tempdir().unwrap();
    let cfg = a.path().join("config.toml");
    assert_eq!(code(&btcm(&["monitoring", "--config", cfg.to_str().unwrap()], c.path())), 0);
    assert_eq!(checksums(a.path()), checksums(c.path()));
}

#[test]
fn every_output_is_checksummed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&btcm(&["spectrum", "--n", "1,2", "--amplitudes"], dir.path())), 0);
    let listed = checksums(dir.path());
    let mut on_disk: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut names: Vec<String> = listed.iter().map(|l| l.0.clone()).collect();
    names.sort();
    assert_eq!(names, on_disk);
    for (name, sum) in listed {
        let bytes = std::fs::read(dir.path().join(&name)).unwrap();
        let digest = sha2_hex(&bytes);
        assert_eq!(digest, sum, "{name}");
    }
}

fn sha2_hex(bytes: &[u8]) -> String {
    // Recomputed through the system tool to stay independent of the binary.
    let mut child = Command::new("sha256sum")
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(bytes).unwrap();
    let out = child.wait_with_output().unwrap();
    String::from_utf8(out.stdout).unwrap().split_whitespace().next().unwrap().to_string()
}

#[test]
fn extreme_limit_rates_match_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = btcm(&["global-rate", "--n", "2,4,8", "--extreme-limit"], dir.path());
    assert_eq!(code(&o), 0);
    for r in rows(&dir.path().join("global_rate.csv")) {
        let gap: f64 = r[3].parse().unwrap();
        assert!(gap < 1e-10, "{r:?}");
    }
}

#[test]
fn zero_trajectories_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = btcm(&["monitoring", "--n-traj", "0"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn monitoring_json_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = btcm(
        &["monitoring", "--n", "1", "--horizon", "4", "--n-traj", "16", "--format", "json", "--eta", "0.5"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("monitoring.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["n_traj"], 16);
    let rate = &doc["results"]["rates"][0];
    assert_eq!(rate["bound"].as_f64().unwrap(), 1.0);
    assert!(rate["rate"].as_f64().unwrap() > 0.0);
}

#[test]
fn advantage_schedules_its_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let o = btcm(
        &["advantage", "--n", "2", "--eta", "0.5", "--horizon", "6", "--n-traj", "24"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("fisher_homodyne_N1_eta0.5.csv").exists());
    let r = rows(&dir.path().join("advantage.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][1], "2");
    let cap: f64 = r[0][4].parse().unwrap();
    assert!(cap > 1.0);
}

#[test]
fn analytic_scaling_tends_to_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = btcm(&["scaling", "--analytic", "--n", "8,16,32,64,128,256"], dir.path());
    assert_eq!(code(&o), 0);
    let zeta = rows(&dir.path().join("zeta.csv"));
    let last: f64 = zeta.last().unwrap()[2].parse().unwrap();
    assert!(last > 2.95 && last < 3.0);
    let fit = rows(&dir.path().join("fits.csv"));
    let a: f64 = fit[0][1].parse().unwrap();
    assert!((a - 3.0).abs() < 1e-2, "{a}");
}

#[test]
fn scaling_needs_four_sizes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&btcm(&["scaling", "--n", "8,12,16"], dir.path())), 2);
}

#[test]
fn rescaling_ratio_is_n() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&btcm(&["rescale-check"], dir.path())), 0);
    for r in rows(&dir.path().join("rescale_check.csv")) {
        let dev: f64 = r[5].parse().unwrap();
        assert!(dev.abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn busy_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.lock"), "").unwrap();
    assert_eq!(code(&btcm(&["rescale-check", "--n", "2"], dir.path())), 2);
}

#[test]
fn worker_count_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_btcm"))
        .args(["rescale-check", "--n", "2", "--out"])
        .arg(dir.path())
        .env("BTCM_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}
