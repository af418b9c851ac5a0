use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sosenergy(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sosenergy"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

/// Data rows of a CSV written by the CLI, header line included.
fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (meta, body) = text.split_once('\n').unwrap();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr
        .headers()
        .unwrap()
        .iter()
        .map(String::from)
        .collect::<Vec<_>>();
    let mut rows = vec![header];
    rows.extend(
        rdr.records()
            .map(|r| r.unwrap().iter().map(String::from).collect()),
    );
    (meta.to_string(), rows)
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let j = rows[0]
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[j].parse().unwrap()).collect()
}

#[test]
fn bad_sos_degree_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"method": "sos-colloc", "degree": 5}"#);
    let out = sosenergy(dir.path(), &["--config", &cfg, "solve"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degree"));
}

#[test]
fn unknown_config_field_reports_its_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "{\n  \"method\": \"taylor\",\n  \"degre\": 3\n}\n",
    );
    let out = sosenergy(dir.path(), &["--config", &cfg, "solve"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("degre") && err.contains("line 3"), "{err}");
}

#[test]
fn solve_taylor_writes_the_scalar_coefficients() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"method": "taylor", "degree": 3}"#);
    let out = sosenergy(dir.path(), &["--config", &cfg, "--out", "res", "solve"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let energy = std::fs::read_to_string(dir.path().join("res/energy.json")).unwrap();
    assert!(energy.contains("1.3660254"), "{energy}");
    let doc: serde_json::Value = serde_json::from_str(&energy).unwrap();
    let v3 = doc["coeffs"]["3"][0].as_f64().unwrap();
    let v2 = (1.0 + 3f64.sqrt()) / 2.0;
    assert!((v3 + 2.0 * v2 / (3.0 * (-2.0 + 4.0 * v2))).abs() < 1e-8);
    assert!(dir.path().join("res/report.json").exists());
}

#[test]
fn solve_sos_reports_one_entry_per_doubling_window() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"method": "sos-colloc", "degree": 4, "schedule": {"doubling": {"first": 1.0, "last": 8.0}}}"#,
    );
    let out = sosenergy(dir.path(), &["--config", &cfg, "--out", "res", "solve"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/report.json")).unwrap())
            .unwrap();
    let widths: Vec<f64> = report["windows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w["half_width"].as_f64().unwrap())
        .collect();
    assert_eq!(widths, vec![1.0, 2.0, 4.0, 8.0]);
}

#[test]
fn scalar_error_csv_is_deterministic_and_well_formed() {
    let dir = TempDir::new().unwrap();
    let a = sosenergy(dir.path(), &["--serial", "--out", "a", "scalar-error"]);
    let b = sosenergy(dir.path(), &["--out", "b", "scalar-error"]);
    assert!(a.status.success() && b.status.success());
    let bytes_a = std::fs::read(dir.path().join("a/scalar_error_d4.csv")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b/scalar_error_d4.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b);

    let (meta, rows) = csv_rows(&dir.path().join("a/scalar_error_d4.csv"));
    assert!(
        meta.starts_with("# config_sha256=") && meta.ends_with(" seed=11"),
        "{meta}"
    );
    assert_eq!(
        rows[0],
        [
            "x",
            "analytic",
            "taylor_4",
            "sos_4",
            "err_taylor",
            "err_sos"
        ]
    );
    assert_eq!(rows.len(), 402);
    let x = column(&rows, "x");
    assert_eq!((x[0], x[200], x[400]), (-8.0, 0.0, 8.0));
    assert_eq!(column(&rows, "err_taylor")[200], 0.0);
    assert_eq!(column(&rows, "err_sos")[200], 0.0);
    assert!(column(&rows, "sos_4").iter().all(|&v| v >= 0.0));
}

#[test]
fn eval_round_trips_a_solved_energy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"method": "complete-sos", "degree": 3}"#);
    let solved = sosenergy(dir.path(), &["--config", &cfg, "--out", "res", "solve"]);
    assert!(
        solved.status.success(),
        "{}",
        String::from_utf8_lossy(&solved.stderr)
    );
    let out = sosenergy(
        dir.path(),
        &[
            "--out",
            "ev",
            "eval",
            "--energy",
            "res/energy.json",
            "--point",
            "0.5",
            "--point",
            "-1.5",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, rows) = csv_rows(&dir.path().join("ev/eval.csv"));
    assert_eq!(rows[0], ["x0", "value", "grad0"]);
    let values = column(&rows, "value");
    // ṽ₁ = √(V₂/2), ṽ₂ = v₃/(4ṽ₁): E(x) = (ṽ₁x + ṽ₂x²)²
    let v2 = (1.0 + 3f64.sqrt()) / 2.0;
    let v3 = -2.0 * v2 / (3.0 * (-2.0 + 4.0 * v2));
    let t1 = (v2 / 2.0).sqrt();
    let t2 = v3 / (4.0 * t1);
    for (x, v) in [0.5, -1.5].into_iter().zip(values) {
        let expected = (t1 * x + t2 * x * x).powi(2);
        assert!(
            (v - expected).abs() < 1e-12 * expected.max(1.0),
            "{x}: {v} vs {expected}"
        );
    }
}

#[test]
fn eval_rejects_a_point_of_the_wrong_size() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"method": "taylor", "degree": 2}"#);
    assert!(
        sosenergy(dir.path(), &["--config", &cfg, "--out", "res", "solve"])
            .status
            .success()
    );
    let out = sosenergy(
        dir.path(),
        &["eval", "--energy", "res/energy.json", "--point", "1,2"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn landscape_grid_has_the_configured_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"landscape": {"half_widths": [1.0], "samples": 21,
            "l21": {"lo": -0.5, "hi": 0.5, "count": 5}, "l22": {"lo": 0.0, "hi": 0.2, "count": 3}}}"#,
    );
    let out = sosenergy(dir.path(), &["--config", &cfg, "--out", "res", "landscape"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (_, rows) = csv_rows(&dir.path().join("res/landscape_w1.csv"));
    assert_eq!(rows[0], ["l21", "l22", "j", "log10_j"]);
    assert_eq!(rows.len(), 1 + 15);
    assert!(column(&rows, "j").iter().all(|&j| j >= 0.0));
}
