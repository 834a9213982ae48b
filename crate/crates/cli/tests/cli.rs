use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-st")).args(args).env("RUST_LOG", "warn").output().expect("spawn")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, json).unwrap();
    p(&path).to_string()
}

const SMALL_TEMPORAL: &str = r#"{
  "schema_version": 1,
  "simulation": {"study": "temporal-jumps", "temporal_jumps": {"n": 300, "k_jumps": 3}},
  "rf": {"n_trees": 40},
  "hybrid": {"algorithm": "rf2", "k_stress": 20, "max_iter": 2, "fit": {"integrate_hyper": true}}
}"#;

#[test]
fn simulate_spatiotemporal_has_150_rows_per_time_point() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    run_ok(&["--seed", "1", "--out", p(&out), "simulate", "--study", "spatiotemporal"]);
    assert_eq!(lines(&out.join("dataset.csv")).len(), 1 + 150 * 8);
    let prov: Value = serde_json::from_str(&fs::read_to_string(out.join("provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 1);
    assert_eq!(prov["command"], "simulate");
}

#[test]
fn simulate_temporal_has_2000_rows() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    run_ok(&["--seed", "1", "--out", p(&out), "simulate", "--study", "temporal-jumps"]);
    assert_eq!(lines(&out.join("dataset.csv")).len(), 2001);
}

#[test]
fn simulate_is_deterministic_and_reproducible_from_provenance() {
    let tmp = TempDir::new().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    run_ok(&["--seed", "7", "--out", p(&a), "simulate"]);
    run_ok(&["--seed", "7", "--out", p(&b), "simulate"]);
    let first = fs::read(a.join("dataset.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("dataset.csv")).unwrap());

    let prov: Value = serde_json::from_str(&fs::read_to_string(a.join("provenance.json")).unwrap()).unwrap();
    let cfg = write_config(tmp.path(), &prov["config"].to_string());
    run_ok(&["--config", &cfg, "--out", p(&c), "simulate"]);
    assert_eq!(first, fs::read(c.join("dataset.csv")).unwrap());

    run_ok(&["--seed", "8", "--out", p(&b), "simulate"]);
    assert_ne!(first, fs::read(b.join("dataset.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let unknown = write_config(tmp.path(), r#"{"schema_version": 1, "simulation": {"sed": 3}}"#);
    assert_eq!(run(&["--config", &unknown, "simulate"]).status.code(), Some(2));

    let version = write_config(tmp.path(), r#"{"schema_version": 99}"#);
    assert_eq!(run(&["--config", &version, "simulate"]).status.code(), Some(2));

    let missing = tmp.path().join("nope.csv");
    let out = tmp.path().join("o");
    assert_eq!(run(&["--out", p(&out), "fit", "--data", p(&missing)]).status.code(), Some(2));

    let trees = write_config(tmp.path(), r#"{"rf": {"n_trees": 0}}"#);
    assert_eq!(run(&["--config", &trees, "simulate"]).status.code(), Some(2));
}

#[test]
fn fit_writes_reports_and_warm_start_needs_fewer_iterations() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TEMPORAL);
    let (d, f, g) = (tmp.path().join("d"), tmp.path().join("f"), tmp.path().join("g"));
    run_ok(&["--config", &cfg, "--out", p(&d), "simulate"]);
    let data = d.join("dataset.csv");
    run_ok(&["--config", &cfg, "--out", p(&f), "fit", "--data", p(&data)]);

    let latent = lines(&f.join("latent.csv"));
    assert_eq!(latent[0], "node,mean,sd");
    // Intercept plus one random-walk node per time point.
    assert_eq!(latent.len(), 1 + 1 + 300);
    assert_eq!(lines(&f.join("predictive.csv")).len(), 301);
    assert_eq!(lines(&f.join("metrics.csv"))[0], "model,split,rmse,mae,cp,aiw");

    let theta = f.join("theta.json");
    run_ok(&["--config", &cfg, "--out", p(&g), "fit", "--data", p(&data), "--warm-start", p(&theta)]);
    let iters = |dir: &Path| -> u64 {
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("theta.json")).unwrap()).unwrap();
        v["optimizer_iterations"].as_u64().unwrap()
    };
    assert!(iters(&g) < iters(&f), "warm {} vs cold {}", iters(&g), iters(&f));
}

#[test]
fn warm_start_from_another_model_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let theta = tmp.path().join("theta.json");
    fs::write(
        &theta,
        r#"{"names": ["other"], "theta_mode": [0.0], "natural": [], "optimizer_iterations": 1, "optimizer_converged": true, "log_marginal": 0.0}"#,
    )
    .unwrap();
    let cfg = write_config(tmp.path(), SMALL_TEMPORAL);
    let d = tmp.path().join("d");
    run_ok(&["--config", &cfg, "--out", p(&d), "simulate"]);
    let out = run(&["--config", &cfg, "--out", p(&d), "fit", "--data", p(&d.join("dataset.csv")), "--warm-start", p(&theta)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn hybrid_rf2_writes_trace_and_one_stress_row_per_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TEMPORAL);
    let (d, h) = (tmp.path().join("d"), tmp.path().join("h"));
    run_ok(&["--config", &cfg, "--out", p(&d), "simulate"]);
    // max_iter 2 cannot meet the stopping rule: a warning, still exit 0.
    run_ok(&["--config", &cfg, "--out", p(&h), "hybrid", "--data", p(&d.join("dataset.csv"))]);

    let stress = lines(&h.join("stress.csv"));
    assert_eq!(stress[0], "node,base_mean,base_sd,corrected_mean,corrected_sd,truth");
    assert_eq!(stress.len(), 1 + 20);
    let trace = lines(&h.join("trace.csv"));
    assert_eq!(trace[0], "iter,d_kl,sigma2_rf,train_rmse");
    assert!(trace[1].starts_with("0,,"));
    let report: Value = serde_json::from_str(&fs::read_to_string(h.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["algorithm"], "rf2");
    assert_eq!(report["iterations"].as_u64().unwrap() as usize, trace.len() - 2);
}

#[test]
fn cv_emits_tidy_table_for_three_models() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
          "simulation": {"study": "spatiotemporal", "spatiotemporal": {"n_per_time": 30, "n_times": 4}},
          "model": {"mesh": {"nx": 8, "ny": 8, "margin": 0.2}},
          "rf": {"n_trees": 20},
          "hybrid": {"max_iter": 1}
        }"#,
    );
    let (d, c) = (tmp.path().join("d"), tmp.path().join("c"));
    run_ok(&["--config", &cfg, "--out", p(&d), "simulate"]);
    run_ok(&["--config", &cfg, "--out", p(&c), "cv", "--data", p(&d.join("dataset.csv"))]);
    let rows = lines(&c.join("cv.csv"));
    assert_eq!(rows[0], "model,block,split,metric,value");
    // 3 models x (6 blocks + mean) x 2 splits x 4 metrics.
    assert_eq!(rows.len() - 1, 3 * 7 * 2 * 4);
    for model in ["INLA", "INLA-RF1.1", "INLA-RF1.2"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{model},mean,test,rmse,"))));
    }
}

#[test]
fn cv_on_temporal_data_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TEMPORAL);
    let d = tmp.path().join("d");
    run_ok(&["--config", &cfg, "--out", p(&d), "simulate"]);
    assert_eq!(run(&["--config", &cfg, "--out", p(&d), "cv", "--data", p(&d.join("dataset.csv"))]).status.code(), Some(2));
}
