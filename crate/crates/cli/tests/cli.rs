use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

const HALF_DISK: &str = r#"{"op":"intersect","args":[{"shape":"ball","r":1.0,"c":[0.0,0.0]},{"shape":"halfspace"}]}"#;
const QUARTER: &str = r#"{"shape":"sector","alpha":0.0,"beta":1.5707963267948966}"#;

fn fraccap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fraccap")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn workdir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("halfdisk.json"), HALF_DISK).unwrap();
    std::fs::write(dir.path().join("quarter.json"), QUARTER).unwrap();
    dir
}

#[test]
fn neutral_young_law_prints_a_right_angle() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["young", "--sigma", "0", "--s", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((sol["theta"].as_f64().unwrap() - FRAC_PI_2).abs() < 1e-6, "{sol}");
    // stdout only, no manifest requested
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn negative_sigma_is_accepted_as_a_value() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["young", "--sigma", "-0.4", "--s", "0.5", "--tol", "1e-6"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(sol["theta"].as_f64().unwrap() < FRAC_PI_2);
    assert!(sol["residual"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn manifest_sits_beside_the_output() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["young", "--sigma", "0.3", "--seed", "5", "--out", "young.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bytes = std::fs::read(dir.path().join("young.json")).unwrap();
    let manifest = json_file(&dir.path().join("young.json.manifest.json"));
    assert_eq!(manifest["command"], "young");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["versions"]["fraccap"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["config"]["sigma"], 0.3);
    assert_eq!(manifest["outputs"][0]["path"], "young.json");
    assert_eq!(manifest["outputs"][0]["sha256"], hex(&bytes));

    let elsewhere = fraccap(dir.path(), &["young", "--sigma", "0.3", "--manifest", "m.json"]);
    assert_eq!(code(&elsewhere), 0);
    assert!(dir.path().join("m.json").exists());
}

#[test]
fn config_hash_follows_the_configuration() {
    let dir = workdir();
    let hash = |sigma: &str, out: &str| {
        let o = fraccap(dir.path(), &["young", "--sigma", sigma, "--out", out]);
        assert_eq!(code(&o), 0);
        json_file(&dir.path().join(format!("{out}.manifest.json")))["config_hash"].clone()
    };
    assert_eq!(hash("0.2", "a.json"), hash("0.2", "b.json"));
    assert_ne!(hash("0.2", "a.json"), hash("0.25", "c.json"));
}

#[test]
fn identity_suite_passes_with_a_fixed_seed() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["verify-identities", "--seed", "1", "--trials", "20"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reports: Value = serde_json::from_slice(&out.stdout).unwrap();
    let reports = reports.as_array().unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r["passed"] == true));
}

#[test]
fn missing_input_exits_with_a_diagnostic() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["energy", "--set", "nowhere.bin", "--container", "halfdisk.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere.bin"), "{}", stderr(&out));
}

#[test]
fn unreadable_input_is_a_configuration_error() {
    let dir = workdir();
    std::fs::write(dir.path().join("junk.json"), "{\"shape\":\"triangle\"}").unwrap();
    let out = fraccap(dir.path(), &["phi", "--set", "junk.json", "--radii", "0.5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("junk.json"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = workdir();
    std::fs::write(dir.path().join("run.json"), r#"{"sigma": 0.1, "temperature": 3}"#).unwrap();
    let out = fraccap(dir.path(), &["young", "--config", "run.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("temperature"), "{}", stderr(&out));
    std::fs::write(dir.path().join("run.json"), r#"{"quadrature": {"rel_tol": 1e-4, "depth": 3}}"#).unwrap();
    assert_eq!(code(&fraccap(dir.path(), &["young", "--config", "run.json"])), 2);
}

#[test]
fn flags_override_the_config_file() {
    let dir = workdir();
    std::fs::write(dir.path().join("run.json"), r#"{"sigma": 0.5, "kernel": {"n": 2, "s": 0.25}}"#).unwrap();
    let out = fraccap(dir.path(), &["young", "--config", "run.json", "--sigma", "0", "--out", "y.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol = json_file(&dir.path().join("y.json"));
    assert!((sol["theta"].as_f64().unwrap() - FRAC_PI_2).abs() < 1e-6);
    let manifest = json_file(&dir.path().join("y.json.manifest.json"));
    assert_eq!(manifest["config"]["sigma"], 0.0);
    assert_eq!(manifest["config"]["kernel"]["s"], 0.25);
}

#[test]
fn invalid_parameters_exit_with_code_two() {
    let dir = workdir();
    for args in [
        &["young", "--sigma", "1.0"][..],
        &["young", "--s", "1.5"],
        &["young", "--tol", "0"],
        &["young", "--bogus"],
        &["phi", "--set", "quarter.json", "--radii", "0.5:0.2"],
        &["minimize", "--container", "halfdisk.json", "--volume", "1.5", "--out", "x.bin"],
    ] {
        let out = fraccap(dir.path(), args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let dir = workdir();
    for bad in ["zero", "0", "-3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_fraccap"))
            .current_dir(dir.path())
            .env("FRACCAP_THREADS", bad)
            .args(["young", "--sigma", "0"])
            .output()
            .unwrap();
        assert_eq!(code(&out), 2, "{bad}");
        assert!(stderr(&out).contains("FRACCAP_THREADS"));
    }
    let ok = Command::new(env!("CARGO_BIN_EXE_fraccap"))
        .current_dir(dir.path())
        .env("FRACCAP_THREADS", "2")
        .args(["young", "--sigma", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&ok), 0);
}

#[test]
fn young_table_accepts_negative_ranges() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["young-table", "--sigmas", "-0.4:0.4:3", "--s", "0.25,0.75", "--tol", "1e-7", "--out", "t.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(csv.lines().next(), Some("sigma,s,theta"));
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0], -0.4);
    for row in rows.iter().filter(|r| r[0] == 0.0) {
        assert!((row[2] - FRAC_PI_2).abs() < 1e-6);
    }
    for s in [0.25, 0.75] {
        let col: Vec<f64> = rows.iter().filter(|r| r[1] == s).map(|r| r[2]).collect();
        assert!(col.windows(2).all(|w| w[0] < w[1]), "{col:?}");
    }
}

#[test]
fn phi_writes_a_csv_profile() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["phi", "--set", "quarter.json", "--radii", "0.3:0.6:3", "--res", "32", "--out", "phi.csv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("phi.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,phi,G,J,err"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), vec![0.3, 0.45, 0.6]);
    for r in &rows {
        // σ = 0 here, so Φ = G − J
        assert!((r[1] - (r[2] - r[3])).abs() <= 1e-12 * r[2].abs().max(1.0));
        assert!(r[4] >= 0.0);
    }
    let manifest = json_file(&dir.path().join("phi.csv.manifest.json"));
    assert_eq!(manifest["inputs"][0]["sha256"], hex(QUARTER.as_bytes()));
}

#[test]
fn energy_and_perimeter_report_their_terms() {
    let dir = workdir();
    let set = r#"{"op":"intersect","args":[{"shape":"ball","r":0.4,"c":[0.0,0.0]},{"shape":"halfspace"}]}"#;
    std::fs::write(dir.path().join("drop.json"), set).unwrap();
    let out = fraccap(dir.path(), &["energy", "--set", "drop.json", "--container", "halfdisk.json", "--sigma", "0.2", "--res", "32", "--out", "e.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let e = json_file(&dir.path().join("e.json"));
    assert!(e["total"]["value"].as_f64().unwrap() > 0.0, "{e}");
    let out = fraccap(dir.path(), &["perimeter", "--set", "drop.json", "--omega", "halfdisk.json", "--res", "32", "--out", "p.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(json_file(&dir.path().join("p.json"))["total"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn extension_values_stay_in_the_unit_interval() {
    let dir = workdir();
    let out = fraccap(dir.path(), &["extend", "--set", "quarter.json", "--res", "24", "--radius", "0.6", "--out", "u.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let u = json_file(&dir.path().join("u.json"));
    let values = u["values"].as_array().unwrap();
    assert_eq!(values.len(), 24 * 24 * u["heights"].as_array().unwrap().len());
    assert!(values.iter().all(|v| (0.0..=1.0).contains(&v.as_f64().unwrap())));
    assert!(u["dirichlet"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn minimized_droplet_feeds_the_blowup() {
    let dir = workdir();
    std::fs::write(dir.path().join("run.json"), r#"{"grid": {"resolution": 48}, "anneal": {"sweeps": 20}}"#).unwrap();
    let out = fraccap(
        dir.path(),
        &["minimize", "--config", "run.json", "--container", "halfdisk.json", "--volume-cells", "300", "--seed", "3", "--out", "d.bin", "--trace", "d.csv"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["volume_cells"], 300);
    let trace = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    // header, the starting state, then one row per sweep
    assert_eq!(trace.lines().count(), 22);
    let manifest = json_file(&dir.path().join("d.bin.manifest.json"));
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);

    let out = fraccap(
        dir.path(),
        &["blowup", "--set", "d.bin", "--container", "halfdisk.json", "--config", "run.json", "--radii", "0.5,0.3", "--out", "b.json"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json_file(&dir.path().join("b.json"));
    let angle = report["fitted_angle_degrees"].as_f64().unwrap();
    assert!(angle > 0.0 && angle < 180.0);
    assert!(report["consecutive_decreasing"].is_boolean());
    assert!(report["contact_point"][1].as_f64().unwrap() == 0.0);
}
