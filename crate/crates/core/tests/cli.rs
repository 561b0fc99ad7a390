use std::path::Path;
use std::process::{Command, Output};

fn tauq(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tauq"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn tauq")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn simulate_then_evaluate_and_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let sim = tauq(
        &[
            "simulate",
            "--dgp",
            "one-d-validation",
            "--n",
            "150",
            "--csv",
            "--seed",
            "3",
            "--out",
            "data.json",
        ],
        p,
    );
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    assert!(p.join("data.json").exists() && p.join("data.csv").exists());

    let ev = tauq(
        &[
            "evaluate",
            "--data",
            "data.json",
            "--dgp",
            "one-d-validation",
            "--out",
            "tau.json",
        ],
        p,
    );
    assert_eq!(code(&ev), 0, "{}", String::from_utf8_lossy(&ev.stderr));
    let text = String::from_utf8_lossy(&ev.stdout);
    assert!(text.lines().any(|l| l.trim_start().starts_with("30 ")));
    let tau: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("tau.json")).unwrap()).unwrap();
    assert_eq!(tau["horizon"], 30);

    let opt = tauq(
        &["optimize", "--data", "data.json", "--out", "policy.json"],
        p,
    );
    assert_eq!(code(&opt), 0, "{}", String::from_utf8_lossy(&opt.stderr));
    assert!(p.join("policy.json").exists());
}

#[test]
fn experiment_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = serde_json::json!({
        "schema": 1,
        "dgp": { "kind": "one-d-validation", "horizon": 2, "seed": 1 },
        "methods": ["FQE-PLAIN", "ORTH-DIFF-Q"],
        "n_grid": [40],
        "replications": 2,
        "oracle": { "grid_size": 10, "rollouts": 5 },
        "seed": 0
    });
    std::fs::write(p.join("exp.json"), cfg.to_string()).unwrap();
    let o = tauq(
        &[
            "experiment",
            "--config",
            "exp.json",
            "--out",
            "out",
            "--jobs",
            "2",
        ],
        p,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(p.join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    assert!(p.join("out/report.json").exists());
}

#[test]
fn exit_codes_distinguish_config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();

    std::fs::write(
        p.join("bad.json"),
        r#"{"schema": 1, "methods": ["NOT-A-METHOD"]}"#,
    )
    .unwrap();
    assert_eq!(code(&tauq(&["experiment", "--config", "bad.json"], p)), 2);
    assert_eq!(
        code(&tauq(&["simulate", "--dgp", "no-such-kind", "--n", "5"], p)),
        2
    );
    assert_eq!(
        code(&tauq(
            &["oracle", "--dgp", "one-d-validation", "--t", "99"],
            p
        )),
        2
    );
    // a missing file is an I/O failure, not a config problem
    assert_eq!(code(&tauq(&["evaluate", "--data", "missing.json"], p)), 3);
    // argument parsing errors come from clap
    assert_eq!(code(&tauq(&["simulate"], p)), 2);
}

#[test]
fn diagnose_reports_second_order_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let o = tauq(
        &[
            "diagnose",
            "--instances",
            "2",
            "--states",
            "3",
            "--seed",
            "9",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        let cols: Vec<f64> = r.split_whitespace().map(|c| c.parse().unwrap()).collect();
        assert!(cols[3] < 1e-10, "excess-variance gap {}", cols[3]);
        assert!(cols[4] > 1.9, "slope {}", cols[4]);
    }
}
