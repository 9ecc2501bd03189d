use std::path::Path;
use std::process::{Command, Output};

const SIM: &str = r#"{"field": {"eta1": {"kind": "constant", "value": 0.4}, "eta2": {"kind": "constant", "value": 0.6},
    "design": {"kind": "common_grid", "grid_shape": [21, 21]}},
    "domain": {"t1_min": 1, "t1_max": 2, "t2_min": 1, "t2_max": 2}, "n_sheets": 30, "seed": 4}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aniso-surf"))
        .current_dir(dir)
        .env_remove("ANISO_SURF_THREADS")
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sim.json"), SIM).unwrap();
    let o = run(dir.path(), &["simulate", "--config", "sim.json", "--out", "data.csv", "--deterministic"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = setup();
    let d = dir.path();
    let text = std::fs::read_to_string(d.join("data.csv")).unwrap();
    assert!(text.starts_with("# domain: 1,2,1,2\n"));
    assert!(text.contains("\nsheet_id,t1,t2,y\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 30 * 21 * 21);

    std::fs::write(d.join("est.json"), r#"{"dataset": "data.csv", "points": [[1.5, 1.5]], "grid": 2}"#).unwrap();
    let o = run(d, &["estimate", "--config", "est.json", "--out", "est.jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(d.join("est.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["t"], serde_json::json!([1.5, 1.5]));
    let h = lines[0]["h_low"].as_f64().unwrap();
    assert!(h > 0.0 && h <= 1.0);

    let o = run(d, &["estimate", "--config", "est.json", "--format", "csv"]);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("t1,t2,h_low,d_hat,anisotropic,"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn boundary_point_is_a_runtime_error() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("est.json"), r#"{"dataset": "data.csv", "points": [[1.02, 1.5]], "reg": {"delta": 0.05}}"#)
        .unwrap();
    let o = run(d, &["estimate", "--config", "est.json"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("BoundaryViolation") && e.contains("1.02"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
}

#[test]
fn invalid_configs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("eta.json"), SIM.replace("0.4", "1.3")).unwrap();
    let o = run(d, &["simulate", "--config", "eta.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("eta1 must lie in (0,1)"), "{}", stderr(&o));

    std::fs::write(d.join("typo.json"), r#"{"dataset": "x.csv", "points": [[1.5, 1.5]], "reg": {"detla": 0.1}}"#)
        .unwrap();
    let o = run(d, &["estimate", "--config", "typo.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("detla"));

    let o = run(d, &["simulate", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FileNotFound"));
}

#[test]
fn experiment_writes_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{"scenario": "risk-scaling", "replicates": 1,
        "sim": {"field": {"eta1": {"kind": "constant", "value": 0.5}, "eta2": {"kind": "constant", "value": 0.5},
            "noise": {"kind": "constant", "sigma": 0.5}, "design": {"kind": "independent_uniform"}},
            "domain": {"t1_min": 1, "t1_max": 2, "t2_min": 1, "t2_max": 2}, "n_sheets": 1},
        "reg": {"delta": 0.05}, "sweep": {"m0": [100, 200]}, "options": {"learning_sheets": 40},
        "output_path": "risk.csv"}"#;
    std::fs::write(d.join("exp.json"), cfg).unwrap();
    let o = run(d, &["experiment", "--config", "exp.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(d.join("risk.csv")).unwrap();
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "M0,empirical_mse,plan_h1,plan_h2,plugin_mse,plugin_h1,plugin_h2,mse_ratio");
    assert_eq!(body.len(), 3);
    assert!(text.contains("# created_unix: "));
    assert!(text.contains("# config: {"));
}

#[test]
fn deterministic_outputs_and_thread_settings() {
    let dir = setup();
    let d = dir.path();
    let a = std::fs::read(d.join("data.csv")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_aniso-surf"))
        .current_dir(d)
        .env("ANISO_SURF_THREADS", "1")
        .args(["simulate", "--config", "sim.json", "--deterministic"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(o.stdout, a);
    let o = run(d, &["simulate", "--config", "sim.json", "--deterministic", "--seed", "5"]);
    assert_ne!(o.stdout, a);
    let o = run(d, &["simulate", "--config", "sim.json", "--threads", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn deform_and_smooth_produce_tables() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(
        d.join("def.json"),
        r#"{"dataset": "data.csv", "anchor": {"t0": 1.5, "s0": 1.5, "lambda1": 1.5, "lambda2": 1.5},
            "points": [[1.5, 1.5], [1.7, 1.3]], "reg": {"delta": 0.1}, "n_nodes": 11}"#,
    )
    .unwrap();
    let o = run(d, &["deform", "--config", "def.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows[0], "t1,t2,a1_hat,a2_hat,quadrature_nodes,projected_nodes");
    assert!(rows[1].starts_with("1.5,1.5,1.5,1.5,"));

    std::fs::write(
        d.join("sm.json"),
        r#"{"targets": [[1.5, 1.5]], "reg": {"delta": 0.1}, "kernel": {"kind": "biweight_product", "kappa": 2.03, "inner_radius_r": 0.5}}"#,
    )
    .unwrap();
    // noiseless data give a zero noise level, for which no plan exists
    let o = run(d, &["smooth", "--config", "sm.json", "--learning", "data.csv", "--new", "data.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("noise variance"));

    let noisy = SIM.replace(r#""design""#, r#""noise": {"kind": "constant", "sigma": 0.1}, "design""#);
    std::fs::write(d.join("noisy.json"), noisy).unwrap();
    assert!(run(d, &["simulate", "--config", "noisy.json", "--out", "noisy.csv"]).status.success());
    let o = run(d, &["smooth", "--config", "sm.json", "--learning", "noisy.csv", "--new", "noisy.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().next().unwrap(), "sheet_id,t1,t2,prediction,effective_n,h1,h2,omega,sigma2");
    assert_eq!(out.lines().count(), 31);
    assert!(out.lines().nth(1).unwrap().split(',').all(|f| f.parse::<f64>().is_ok()));
}
