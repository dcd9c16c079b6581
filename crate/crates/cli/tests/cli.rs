use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ltsens::eigen::lambda_sensitivity;
use ltsens::{Family, MarketParams, ModelSpec};
use serde_json::Value;
use tempfile::TempDir;

const OU: &str = r#"
[model]
family = "ou"
b = 0.16
k = 2.0
sigma = 0.8

[market]
nu = -2.0
rho_bar = -0.5
rho_sq = 0.25

[run]
horizons = [1.0, 5.0]
n_paths = 20000
steps_per_unit_time = 50
seed = 7
"#;

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn ltsens(args: &[&str], scenario: &Path) -> Output {
    ltsens_env(args, scenario, &[])
}

fn ltsens_env(args: &[&str], scenario: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ltsens"));
    cmd.args(args).arg("--scenario").arg(scenario);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn csv_rows(out: &Output) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(out.stdout.as_slice());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn decompose_rows_satisfy_the_identity() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "ou.toml", OU);
    let out = ltsens(&["decompose"], &sc);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 2);
    let z = header.iter().position(|h| h == "z_closed").unwrap();
    for row in &rows {
        assert!(row[z].parse::<f64>().unwrap() <= 3.0);
    }
}

#[test]
fn decompose_flags_a_corrupted_eigenvalue() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "ou.toml", OU);
    let out = ltsens(&["decompose", "--perturb-lambda", "0.01"], &sc);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quadratic_drift_reports_the_limit() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "q.toml", &OU.replace("\"ou\"", "\"quadratic_drift\""));
    let out = ltsens(&["decompose", "--paths", "5000"], &sc);
    let (header, rows) = csv_rows(&out);
    let kind = header.iter().position(|h| h == "f_kind").unwrap();
    let z = header.iter().position(|h| h == "z_closed").unwrap();
    let reason = header.iter().position(|h| h == "reason").unwrap();
    for row in rows {
        assert_eq!(row[kind], "limit");
        assert_eq!(row[z], "");
        assert!(!row[reason].is_empty());
    }
}

#[test]
fn invalid_inputs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let positive_nu = write(&dir, "nu.toml", &OU.replace("nu = -2.0", "nu = 0.5"));
    let out = ltsens(&["sensitivity"], &positive_nu);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ν < 0 violated"));

    let feller = write(&dir, "cir.toml", &OU.replace("\"ou\"", "\"cir\""));
    let out = ltsens(&["decompose"], &feller);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("b > σ²/2 violated"));

    let garbage = write(&dir, "bad.toml", "[model]\nfamily = 3\n");
    assert_eq!(ltsens(&["decompose"], &garbage).status.code(), Some(1));
    assert_eq!(ltsens(&["decompose"], &dir.path().join("missing.toml")).status.code(), Some(1));
    assert_eq!(ltsens(&["decompose", "--bogus"], &garbage).status.code(), Some(1));

    let sc = write(&dir, "ou.toml", OU);
    let out = ltsens_env(&["compare"], &sc, &[("LTSENS_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_ltsens")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn same_seed_gives_identical_bytes_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "ou.toml", OU);
    let one = ltsens_env(&["decompose"], &sc, &[("LTSENS_THREADS", "1")]);
    let three = ltsens_env(&["decompose"], &sc, &[("LTSENS_THREADS", "3")]);
    assert_eq!(one.stdout, three.stdout);
    let other_seed = ltsens(&["decompose", "--seed", "8"], &sc);
    assert_ne!(one.stdout, other_seed.stdout);
}

#[test]
fn json_mirrors_csv() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "ou.toml", OU);
    let csv_out = ltsens(&["compare"], &sc);
    let json_path = dir.path().join("out.json");
    let out = ltsens(&["compare", "--out", json_path.to_str().unwrap()], &sc);
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = csv_rows(&csv_out);
    let json: Value = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
    let arr = json.as_array().unwrap();
    assert_eq!(arr.len(), rows.len());
    for (obj, row) in arr.iter().zip(&rows) {
        let obj = obj.as_object().unwrap();
        assert_eq!(obj.keys().cloned().collect::<Vec<_>>(), header);
        for (h, cell) in header.iter().zip(row) {
            match &obj[h] {
                Value::Number(n) => assert_eq!(n.as_f64().unwrap(), cell.parse::<f64>().unwrap()),
                Value::String(s) => assert_eq!(s, cell),
                Value::Null => assert_eq!(cell, ""),
                other => panic!("unexpected {other}"),
            }
        }
    }
}

#[test]
fn compare_single_point_matches_closed_forms() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "c.toml", &format!("{OU}\n[compare]\nnu_grid = [-2.0]\nk_grid = [2.0]\n"));
    let out = ltsens(&["compare"], &sc);
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 2);
    let mkt = MarketParams {
        r: 0.0,
        omega: 1.0,
        xi: 1.0,
        nu: -2.0,
        rho_bar: -0.5,
        rho_sq: 0.25,
    };
    for row in &rows {
        for (j, family) in Family::STATE_MODELS.into_iter().enumerate() {
            let exact = lambda_sensitivity(&ModelSpec::new(family, 0.16, 2.0, 0.8), &mkt).unwrap();
            assert_eq!(row[3 + j].parse::<f64>().unwrap(), exact);
        }
    }
}

#[test]
fn compare_uncorrelated_signs_agree() {
    let dir = TempDir::new().unwrap();
    let body = OU.replace("rho_bar = -0.5", "rho_bar = 0.0").replace("rho_sq = 0.25", "rho_sq = 0.0");
    let sc = write(&dir, "c.toml", &body);
    let (_, rows) = csv_rows(&ltsens(&["compare"], &sc));
    for row in rows {
        for cell in &row[3..7] {
            assert!(cell.parse::<f64>().unwrap() < 0.0);
        }
    }
}

#[test]
fn compare_marks_invalid_points() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "c.toml", &format!("{OU}\n[compare]\nnu_grid = [-1.0, 0.5]\nk_grid = [-1.0]\n"));
    let out = ltsens(&["compare"], &sc);
    assert_eq!(out.status.code(), Some(0));
    let (_, rows) = csv_rows(&out);
    assert!(rows[0][3..7].iter().all(|c| c.parse::<f64>().unwrap().is_finite()));
    assert!(rows[0][7].is_empty());
    assert!(rows[1][3..7].iter().all(String::is_empty));
    assert!(rows[1][7].contains("ν < 0 violated"));
    assert!(rows[2][7].contains("k > 0 violated"));

    let empty = write(&dir, "e.toml", &format!("{OU}\n[compare]\nnu_grid = []\nk_grid = [1.0]\n"));
    assert_eq!(ltsens(&["compare"], &empty).status.code(), Some(1));
}

#[test]
fn black_scholes_sensitivity_is_exact() {
    let dir = TempDir::new().unwrap();
    let sc = write(
        &dir,
        "bs.json",
        r#"{"model": {"family": "black_scholes", "mu": 0.1, "sigma": 0.2},
            "market": {"r": 0.02, "nu": -2.0},
            "run": {"horizons": [2.0, 5.0, 10.0]}}"#,
    );
    let out = ltsens(&["sensitivity"], &sc);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&out);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for row in rows {
        let t: f64 = row[col("t")].parse().unwrap();
        let residual: f64 = row[col("residual")].parse().unwrap();
        assert_eq!(row[col("std_error")], "0");
        assert!((residual - 0.5 / t).abs() < 1e-12);
    }
}

fn validate_report(out: &Output) -> Vec<(String, bool, f64)> {
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    json.as_array()
        .unwrap()
        .iter()
        .map(|c| {
            (
                c["check"].as_str().unwrap().to_string(),
                c["passed"].as_bool().unwrap(),
                c["value"].as_f64().unwrap_or(f64::NAN),
            )
        })
        .collect()
}

#[test]
fn validate_passes_and_is_stable_across_seeds() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "ou.toml", OU);
    let a = ltsens(&["validate"], &sc);
    let b = ltsens(&["validate", "--seed", "99"], &sc);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(b.status.code(), Some(0), "{}", String::from_utf8_lossy(&b.stdout));
    let (ra, rb) = (validate_report(&a), validate_report(&b));
    let martingale = |r: &[(String, bool, f64)]| r.iter().find(|c| c.0 == "martingale").unwrap().2;
    assert_ne!(martingale(&ra), martingale(&rb));
}

#[test]
fn validate_catches_a_corrupted_eigenvalue() {
    let dir = TempDir::new().unwrap();
    let sc = write(&dir, "ou.toml", OU);
    let out = ltsens(&["validate", "--perturb-lambda", "1e-3"], &sc);
    assert_eq!(out.status.code(), Some(3));
    let report = validate_report(&out);
    assert!(!report.iter().find(|c| c.0 == "generator_residual").unwrap().1);
}
