use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use pls::data::{load_csv, read_matrix_csv, Task};
use serde_json::Value;

fn pls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pls"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pls(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    json(path)
}

const QUICK: &[&str] = &["--synthetic", "sine_regression", "--n", "120", "--steps", "300", "--particles", "30", "--rank-floor", "1e-3"];

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    ok(&args)
}

#[test]
fn default_run_writes_finite_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["run", "--synthetic", "sine_regression", "--out", d]);
    let m = json(dir.path().join("metrics.json"));
    assert!(m["nll"].as_f64().unwrap().is_finite());
    assert!(m["mae"].as_f64().unwrap().is_finite());
    for f in ["basis.json", "coeffs.csv", "predictions.csv", "diagnostics.json", "manifest.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn artifacts_match_published_schemas() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &[]);
    for (file, schema_file) in [("diagnostics.json", "diagnostics.schema.json"), ("metrics.json", "metrics.schema.json")] {
        let validator = jsonschema::validator_for(&schema(schema_file)).unwrap();
        let doc = json(dir.path().join(file));
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{file}: {errors:?}");
    }
}

#[test]
fn identical_config_gives_identical_coefficients() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_into(a.path(), &["--seed", "5"]);
    run_into(b.path(), &["--seed", "5"]);
    for f in ["coeffs.csv", "predictions.csv", "basis.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, threads: &str| {
        let mut args = vec!["run", "--out", dir.to_str().unwrap()];
        args.extend_from_slice(QUICK);
        let out = Command::new(env!("CARGO_BIN_EXE_pls")).args(&args).env("PLS_THREADS", threads).output().unwrap();
        assert!(out.status.success());
    };
    run(a.path(), "1");
    run(b.path(), "3");
    assert_eq!(fs::read(a.path().join("coeffs.csv")).unwrap(), fs::read(b.path().join("coeffs.csv")).unwrap());
}

#[test]
fn zero_steps_keeps_the_initial_law() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["run", "--synthetic", "sine_regression", "--n", "120", "--rank-floor", "1e-3", "--steps", "0", "--particles", "400", "--out", d]);
    let basis = json(dir.path().join("basis.json"));
    let lam: Vec<f64> = basis["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let (_, u) = read_matrix_csv(fs::File::open(dir.path().join("coeffs.csv")).unwrap()).unwrap();
    assert_eq!(u.ncols(), lam.len());
    // Sample variance of N(0, λ) from 400 draws: relative sd ≈ 0.07.
    for (m, l) in lam.iter().enumerate().take(3) {
        let col = u.column(m);
        let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
        assert!((var / l - 1.0).abs() < 0.3, "coordinate {m}: {var} vs {l}");
    }
    assert_eq!(json(dir.path().join("diagnostics.json"))["horizon"].as_f64(), Some(0.0));
}

#[test]
fn predictions_load_as_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["--grid=-3,3,25"]);
    let preds = load_csv(&dir.path().join("predictions.csv"), Task::Regression).unwrap();
    assert_eq!(preds.len(), 30);
    let grid = load_csv(&dir.path().join("grid_predictions.csv"), Task::Regression).unwrap();
    assert_eq!(grid.dim(), 24);
}

#[test]
fn fit_then_predict_matches_run_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth_dir = d.join("synth");
    ok(&["synth", "poisson_squared", "--n", "80", "--seed", "3", "--out", synth_dir.to_str().unwrap()]);
    let data = synth_dir.join("data.csv");
    let truth = fs::read_to_string(synth_dir.join("truth.csv")).unwrap();
    assert!(truth.starts_with("x,f\n"));
    assert_eq!(truth.lines().count(), 81);

    let fit_dir = d.join("fit");
    ok(&[
        "fit", "--data", data.to_str().unwrap(), "--likelihood", "poisson", "--eta", "1e-4", "--steps", "200",
        "--particles", "20", "--rank-floor", "1e-3", "--out", fit_dir.to_str().unwrap(),
    ]);
    assert!(!fit_dir.join("predictions.csv").exists());
    let pred_dir = d.join("pred");
    ok(&[
        "predict", "--basis", fit_dir.join("basis.json").to_str().unwrap(), "--coeffs",
        fit_dir.join("coeffs.csv").to_str().unwrap(), "--data", data.to_str().unwrap(), "--likelihood", "poisson",
        "--out", pred_dir.to_str().unwrap(),
    ]);
    let (header, draws) = read_matrix_csv(fs::File::open(pred_dir.join("predictions.csv")).unwrap()).unwrap();
    assert_eq!(header.len(), 80);
    assert_eq!(draws.nrows(), 20);
    assert!(json(pred_dir.join("metrics.json"))["nll"].as_f64().unwrap().is_finite());
    let manifest = json(pred_dir.join("manifest.json"));
    assert!(manifest["factorization"]["method"].is_string());
}

#[test]
fn manifest_records_parameters() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), &["--seed", "11", "--kernel", "matern32"]);
    let m = json(dir.path().join("manifest.json"));
    assert_eq!(m["seed"], 11);
    assert_eq!(m["params"]["config"]["kernel"], "matern32");
    assert_eq!(m["params"]["config"]["n_particles"], 30);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["git_version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert!(m["factorization"]["method"].is_string());
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(outputs.contains(&"coeffs.csv") && outputs.contains(&"manifest.json"));
}

#[test]
fn scaling_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&[
        "scaling", "--synthetic", "sine_regression", "--n", "100", "--steps", "50", "--particles", "10", "--rank-floor",
        "1e-3", "--axis", "inducing", "--values", "8,16", "--out", d,
    ]);
    let text = fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "axis,value,decompose_s,simulate_s,predict_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("inducing,8,"));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // Unknown flag and bad value are input errors.
    assert_eq!(pls(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(pls(&["run", "--synthetic", "sine_regression", "--noise-var", "-1", "--out", d]).status.code(), Some(1));
    let bad_csv = dir.path().join("bad.csv");
    fs::write(&bad_csv, "x,y\n0,1\n1,NaN\n").unwrap();
    let out = pls(&["run", "--data", bad_csv.to_str().unwrap(), "--out", d]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    // A step size past the prior stability limit is rejected up front.
    let out = pls(&["run", "--synthetic", "sine_regression", "--n", "60", "--rank-floor", "0.5", "--eta", "0.9", "--out", d]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    // Stable for the prior but far too stiff for σ² = 1e-8: numerical failure.
    let out = pls(&[
        "run", "--synthetic", "sine_regression", "--n", "60", "--rank-floor", "0.1", "--noise-var", "1e-8", "--eta", "1e-3",
        "--steps", "2000", "--particles", "4", "--out", d,
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    // Missing input file.
    assert_eq!(pls(&["run", "--data", "/nonexistent/x.csv", "--out", d]).status.code(), Some(3));
    // Output path blocked by a regular file.
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let nested = blocker.join("out");
    let mut args = vec!["run", "--out", nested.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    assert_eq!(pls(&args).status.code(), Some(3));
    assert_eq!(
        Command::new(env!("CARGO_BIN_EXE_pls")).args(["synth", "sine_regression", "--out", d]).env("PLS_THREADS", "many").output().unwrap().status.code(),
        Some(1)
    );
}

#[test]
fn invalid_config_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // Large enough that a full run would take far longer than the budget.
    let args = ["run", "--synthetic", "sine_regression", "--n", "20000", "--inducing", "1500", "--likelihood", "student_t", "--dof", "-2", "--out", d];
    let start = Instant::now();
    let out = pls(&args);
    let elapsed = start.elapsed();
    assert_eq!(out.status.code(), Some(1));
    assert!(elapsed < Duration::from_millis(100), "{elapsed:?}");
}

#[test]
fn help_exits_zero() {
    assert!(pls(&["--help"]).status.success());
    assert!(pls(&["run", "--help"]).status.success());
}
