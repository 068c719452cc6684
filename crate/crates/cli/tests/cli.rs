use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qexp_risk::allocation::{allocate, AllocationOptions};
use qexp_risk::{build_grid, simulate_paths, Driver, JumpMark, LevyModel, Payoff, RegressionConfig, RiskEngine};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qexp-risk"));
    c.env_remove("QERISK_OUT_DIR");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn value(rows: &[Vec<String>], quantity: &str) -> f64 {
    rows.iter()
        .find(|r| r[1] == quantity)
        .unwrap_or_else(|| panic!("no row {quantity}"))[2]
        .parse()
        .unwrap()
}

const MINIMAL: &str = r#"
scenario_id = "minimal"
task = "simulate"
[model]
mu = 1.0
sigma = 0.0
[grid]
steps = 20
[mc]
paths = 64
seed = 5
"#;

const DESK: &str = r#"
scenario_id = "desk"
task = "allocate"
[model]
mu = 0.1
sigma = 0.3
marks = [{ size = -0.2, intensity = 1.5 }]
[grid]
steps = 10
[mc]
paths = 4000
seed = 2024
[driver]
family = "entropic"
gamma = 1.0
[[payoff.decomposition]]
kind = "affine"
a = 0.1
b = 0.5
[[payoff.decomposition]]
kind = "affine"
a = -0.2
b = 0.3
[methods]
quadrature_nodes = 4
"#;

#[test]
fn minimal_simulate_reports_unit_terminal_state() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("min.toml"), MINIMAL).unwrap();
    let out = run(&["simulate", "--config", "min.toml", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&dir.path().join("r/minimal.csv"));
    assert!((value(&rows, "x_T.mean") - 1.0).abs() <= 1e-12);
    assert_eq!(value(&rows, "x_T.variance"), 0.0);
    assert!(dir.path().join("r/minimal.provenance.json").exists());
}

#[test]
fn missing_gamma_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), DESK.replace("gamma = 1.0", "")).unwrap();
    let out = run(&["risk", "--config", "bad.toml", "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("driver.gamma"));
    assert!(!dir.path().join("r").exists());
}

#[test]
fn syntax_error_exits_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "task = \n").unwrap();
    let out = run(&["report", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn missing_config_file_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["report", "--config", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn failed_check_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("min.toml"), MINIMAL).unwrap();
    // A negative tolerance cannot be met by a noisy sample.
    let out = run(
        &[
            "simulate",
            "--config",
            "min.toml",
            "--set",
            "model.sigma=0.3",
            "--set",
            "tolerances.moment_se=-1",
            "--out",
            "r",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let rows = read_csv(&dir.path().join("r/minimal.csv"));
    assert!(rows.iter().any(|r| r[4] == "moment_mean" && r[5] == "false"));
}

#[test]
fn env_var_sets_output_directory_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("min.toml"),
        MINIMAL.replace("sigma = 0.0", "sigma = 0.2"),
    )
    .unwrap();
    let a = bin()
        .args(["simulate", "--config", "min.toml", "--format", "json-lines"])
        .env("QERISK_OUT_DIR", dir.path().join("envout"))
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0));
    let first = fs::read_to_string(dir.path().join("envout/minimal.jsonl")).unwrap();
    let b = run(
        &[
            "simulate",
            "--config",
            "min.toml",
            "--format",
            "json-lines",
            "--seed",
            "6",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(b.status.code(), Some(0));
    let second = fs::read_to_string(dir.path().join("s/minimal.jsonl")).unwrap();
    assert_ne!(first, second);
    for line in first.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["scenario_id"], "minimal");
    }
}

#[test]
fn desk_allocation_matches_library_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("desk.toml"), DESK).unwrap();
    let out = run(&["allocate", "--config", "desk.toml", "--out", "r"], dir.path());
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = read_csv(&dir.path().join("r/desk.csv"));

    let model = LevyModel::new(0.0, 0.1, 0.3, vec![JumpMark::new(-0.2, 1.5)]).unwrap();
    let bundle = simulate_paths(&build_grid(1.0, 10).unwrap(), &model, 4000, 2024).unwrap();
    let engine = RiskEngine::new(
        &bundle,
        Driver::entropic(1.0, &[1.5]).unwrap(),
        RegressionConfig::default(),
    );
    let xi = Payoff::portfolio(vec![Payoff::affine(0.1, 0.5), Payoff::affine(-0.2, 0.3)]);
    let opts = AllocationOptions {
        quadrature_nodes: 4,
        ..AllocationOptions::default()
    };
    let rep = allocate(&engine, &xi, &opts).unwrap();

    assert_eq!(value(&rows, "rho_0").to_bits(), rep.rho.value.to_bits());
    for r in &rep.rows {
        assert_eq!(value(&rows, &format!("{}.fd", r.label)).to_bits(), r.fd.value.to_bits());
        assert_eq!(
            value(&rows, &format!("{}.measure", r.label)).to_bits(),
            r.measure.value.to_bits()
        );
        assert_eq!(
            value(&rows, &format!("{}.aumann_shapley", r.label)).to_bits(),
            r.aumann_shapley.value.to_bits()
        );
    }
    let total: f64 = rep.rows.iter().map(|r| r.aumann_shapley.value).sum();
    let residual = value(&rows, "full_allocation.aumann_shapley");
    assert!((residual - (rep.rho.value - total)).abs() <= 1e-15);
    assert!(rows
        .iter()
        .any(|r| r[1] == "full_allocation.aumann_shapley" && r[4] == "full_allocation"));
}
