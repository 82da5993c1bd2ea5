//! End-to-end runs of the `sparsebvar` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use sparsebvar::cli::load_moments;
use sparsebvar::data::{load_csv, select_set, standardize, transform_panel, DatasetManifest, ModelSize, DATA_DIR_ENV};
use sparsebvar::minnesota::MinnesotaHyper;
use sparsebvar::posterior::fit_minnesota;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsebvar"));
    c.env_remove(DATA_DIR_ENV);
    c
}

fn run(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut c = bin();
    if let Some(p) = cfg {
        c.arg("--config").arg(p);
    }
    c.args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(json).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulated_config(out: &Path) -> Value {
    serde_json::json!({
        "simulate": { "m": 3, "t": 90, "sparsity": "Sparse" },
        "model": { "p": 2, "theta1_mode": "fixed", "theta1": 0.2 },
        "sparsify": { "lambdas": [0.1, 1.0] },
        "sampling": { "draws": 60, "seed": 9 },
        "forecast": { "split": "60", "horizons": [1, 2] },
        "evaluation": { "mcs_replications": 200 },
        "paths": { "output": out }
    })
}

/// Quarterly CSV holding every bundled manifest series, strictly positive.
fn synthetic_fred_csv(path: &Path, rows: usize, seed: u64) {
    let manifest = DatasetManifest::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<&str> = manifest.variables.iter().map(|v| v.mnemonic.as_str()).collect();
    let mut level = vec![0.0f64; names.len()];
    let mut text = format!("sasdate,{}\n", names.join(","));
    for r in 0..rows {
        let (year, q) = (1960 + r / 4, r % 4);
        text.push_str(&format!("{year}-{:02}-01", 3 * q + 1));
        for l in level.iter_mut() {
            *l += 0.01 + 0.02 * rng.sample::<f64, _>(StandardNormal);
            text.push_str(&format!(",{}", 100.0 * l.exp()));
        }
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

#[test]
fn study_smoke_run_writes_finite_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("study");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &serde_json::json!({
            "study": { "m": [3], "t": [80], "sparsity": ["Dense", "Sparse"], "replications": 2 },
            "sampling": { "draws": 50 },
            "sparsify": { "lambdas": [0.1, 1.0] },
            "paths": { "output": out }
        }),
    );
    ok(&run(&["study"], Some(&cfg)));
    let rows = read_json(&out.join("study.json"));
    let rows = rows.as_array().unwrap();
    // benchmark, SAVS-median and CDA, plus one sparse row per λ, for each of two cells
    assert_eq!(rows.len(), 2 * 5);
    for r in rows {
        assert!(r["mean_ratio_coeffs"].as_f64().unwrap().is_finite());
        assert!(r["mean_ratio_cov"].as_f64().unwrap().is_finite());
    }
    assert!(fs::read_to_string(out.join("study.csv")).unwrap().lines().count() == 11);
    assert!(out.join("replications.csv").exists());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "study");
}

#[test]
fn full_factorial_study_grid_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grid");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &serde_json::json!({
            "study": { "m": [3, 7], "t": [40, 80, 120], "sparsity": ["Dense", "Moderate", "Sparse"], "replications": 1 },
            "sampling": { "draws": 20 },
            "sparsify": { "lambdas": [1.0] },
            "paths": { "output": out }
        }),
    );
    ok(&run(&["study", "--workers", "2"], Some(&cfg)));
    let rows = read_json(&out.join("study.json"));
    let cells: std::collections::BTreeSet<(u64, u64, String)> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["m"].as_u64().unwrap(), r["T"].as_u64().unwrap(), r["sparsity"].as_str().unwrap().to_string()))
        .collect();
    assert_eq!(cells.len(), 18);
}

#[test]
fn existing_output_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("exists");
    fs::create_dir(&out).unwrap();
    let cfg = write_config(tmp.path(), "c.json", &simulated_config(&out));
    let res = run(&["fit"], Some(&cfg));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--force"));
    ok(&run(&["fit", "--force"], Some(&cfg)));
}

#[test]
fn bad_configs_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "u.json", &serde_json::json!({ "model": { "lags": 3 } }));
    assert_eq!(run(&["fit"], Some(&unknown)).status.code(), Some(2));
    let invalid = write_config(tmp.path(), "i.json", &serde_json::json!({ "model": { "p": 0 } }));
    assert_eq!(run(&["fit"], Some(&invalid)).status.code(), Some(2));
    let mut cfg = simulated_config(&tmp.path().join("o"));
    cfg["forecast"]["split"] = "2500:Q1".into();
    let split = write_config(tmp.path(), "s.json", &cfg);
    assert_eq!(run(&["forecast"], Some(&split)).status.code(), Some(2));
    let workers = write_config(tmp.path(), "w.json", &simulated_config(&tmp.path().join("w")));
    assert_eq!(run(&["fit", "--workers", "0"], Some(&workers)).status.code(), Some(2));
    assert_eq!(run(&["fit"], Some(&tmp.path().join("missing.json"))).status.code(), Some(2));
}

#[test]
fn missing_data_file_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &serde_json::json!({ "paths": { "data": tmp.path().join("nope.csv"), "output": tmp.path().join("o") } }),
    );
    let res = run(&["fit"], Some(&cfg));
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("nope.csv"));
}

#[test]
fn fit_on_file_data_reloads_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("fred.csv");
    synthetic_fred_csv(&data, 60, 3);
    let out = tmp.path().join("fit");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &serde_json::json!({
            "model": { "size": "L", "p": 2, "theta1_mode": "fixed", "theta1": 0.05 },
            "paths": { "data": "fred.csv", "output": out }
        }),
    );
    ok(&run(&["fit", "--data-dir", tmp.path().to_str().unwrap()], Some(&cfg)));
    let (moments, meta) = load_moments(&out).unwrap();
    assert_eq!((meta.m, meta.p, meta.n), (165, 2, 331));
    assert_eq!(meta.theta1, 0.05);
    assert_eq!(meta.variables.len(), 165);
    // two leading rows go to second-order transforms, two more to lags
    assert_eq!(meta.nobs, 56);
    assert!(!out.join("log_ml_grid.csv").exists());

    let manifest = DatasetManifest::bundled();
    let raw = load_csv(&data, &manifest).unwrap();
    let panel = transform_panel(&raw, &manifest).unwrap();
    let set = select_set(&manifest, ModelSize::L).unwrap();
    let (z, stats) = standardize(&panel.select_columns(&set.variables.iter().map(|v| panel.column_index(v).unwrap()).collect::<Vec<_>>()).unwrap()).unwrap();
    let fit = fit_minnesota(&z, 2, &MinnesotaHyper::new(165, 0.05)).unwrap();
    assert_eq!(moments, fit.moments);
    assert_eq!(meta.standardization, stats);
    assert_eq!(meta.log_ml, fit.log_ml);

    let man = read_json(&out.join("manifest.json"));
    let inputs = man["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 1);
    assert_eq!(inputs[0]["role"], "data");
    assert_eq!(inputs[0]["sha256"].as_str().unwrap(), sparsebvar::cli::sha256_file(&data).unwrap());
}

#[test]
fn data_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_fred_csv(&tmp.path().join("fred.csv"), 40, 4);
    let out = tmp.path().join("fit");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &serde_json::json!({ "model": { "p": 2 }, "paths": { "data": "fred.csv", "output": out } }),
    );
    let res = bin().env(DATA_DIR_ENV, tmp.path()).arg("--config").arg(&cfg).arg("fit").output().unwrap();
    ok(&res);
    // grid mode stores the whole marginal-likelihood profile
    let grid = fs::read_to_string(out.join("log_ml_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + sparsebvar::posterior::THETA1_GRID.len());
    let (_, meta) = load_moments(&out).unwrap();
    assert_eq!(meta.variables, ["GDPC1", "CPIAUCSL", "FEDFUNDS"]);
    assert!(sparsebvar::posterior::THETA1_GRID.contains(&meta.theta1));
}

#[test]
fn evaluate_is_deterministic_across_reruns_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    let cfg = write_config(tmp.path(), "c.json", &simulated_config(&out));
    ok(&run(&["evaluate", "--workers", "1"], Some(&cfg)));
    let first = snapshot(&out);
    assert!(first.contains_key(Path::new("evaluation.csv")));
    assert!(first.contains_key(Path::new("bvar/forecasts.csv")));
    assert!(first.contains_key(Path::new("sparse_lambda0.1/scores.csv")));
    ok(&run(&["evaluate", "--workers", "1", "--force"], Some(&cfg)));
    assert_eq!(snapshot(&out), first);
    ok(&run(&["evaluate", "--workers", "4", "--force"], Some(&cfg)));
    assert_eq!(snapshot(&out), first);

    let man = read_json(&out.join("manifest.json"));
    assert_eq!(man["command"], "evaluate");
    assert_eq!(man["seeds"]["master"], 9);
    assert!(man["seeds"]["simulation"].is_u64());
    assert!(man["seeds"]["mcs"].is_u64());
    assert_eq!(man["inputs"][0]["role"], "simulated_panel");
    assert_eq!(man["config"]["sampling"]["draws"], 60);
    assert!(man["version"].is_string());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = write_config(tmp.path(), "c.json", &simulated_config(&a));
    ok(&run(&["forecast"], Some(&cfg)));
    ok(&run(&["forecast", "--seed", "10", "--output", b.to_str().unwrap()], Some(&cfg)));
    let man = read_json(&b.join("manifest.json"));
    assert_eq!(man["seeds"]["master"], 10);
    assert_eq!(man["config"]["sampling"]["seed"], 10);
    assert_ne!(fs::read(a.join("bvar/forecasts.csv")).unwrap(), fs::read(b.join("bvar/forecasts.csv")).unwrap());
}

#[test]
fn benchmark_only_evaluation_has_unit_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    let mut json = simulated_config(&out);
    json["sparsify"]["enabled"] = false.into();
    let cfg = write_config(tmp.path(), "c.json", &json);
    ok(&run(&["evaluate"], Some(&cfg)));
    let report = read_json(&out.join("evaluation.json"));
    let rows = report["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    for r in rows {
        assert_eq!(r["model"], "bvar");
        assert_eq!(r["rmse_ratio"], 1.0);
        assert_eq!(r["lpl_diff"], 0.0);
        assert_eq!(r["in_mcs_point"], true);
    }
}

#[test]
fn forecast_csv_columns_are_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("fc");
    let cfg = write_config(tmp.path(), "c.json", &simulated_config(&out));
    ok(&run(&["forecast"], Some(&cfg)));
    let text = fs::read_to_string(out.join("bvar/forecasts.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "origin,theta1,horizon,target,mean,sd,q05,q50,q95,realized,mean_original_units,realized_original_units"
    );
    // origins 59..=88 (the last with a realized value), two horizons, three targets
    assert_eq!(text.lines().count(), 1 + 30 * 2 * 3);
    let scores = fs::read_to_string(out.join("bvar/scores.csv")).unwrap();
    assert!(scores.starts_with("origin,horizon,scope,squared_error,log_score"));
}
