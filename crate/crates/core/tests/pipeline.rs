use proptest::prelude::*;

use tauq::dgp::{build_dgp, DgpKind, DgpSpec};
use tauq::harness::{
    emit_report, read_report_json, run_experiment, run_experiment_with_jobs, write_report_csv,
    ExperimentConfig, Method, OracleSettings, ReportFormat,
};
use tauq::regress::RegressorSpec;
use tauq::rlearner::{evaluate_policy, optimize_policy, stage_fold, EvalConfig, OptConfig};
use tauq::types::FoldAssignment;

fn short_one_d(horizon: usize) -> DgpSpec {
    DgpSpec {
        horizon,
        ..DgpSpec::new(DgpKind::OneDValidation).with_seed(4)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_and_balance(n in 2usize..300, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let f = FoldAssignment::random(n, k, seed).unwrap();
        let mut seen = vec![0usize; n];
        let mut sizes = Vec::new();
        for fold in 0..k {
            let m = f.members(fold);
            sizes.push(m.len());
            for i in &m {
                seen[*i] += 1;
            }
            let mut all: Vec<usize> = m.iter().chain(&f.complement(fold)).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
        prop_assert!(seen.iter().all(|c| *c == 1));
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(f, FoldAssignment::random(n, k, seed).unwrap());
    }

    #[test]
    fn dgp_policies_are_distributions(seed in 0u64..50, t in 1usize..=5, x in proptest::collection::vec(-5.0f64..5.0, 50)) {
        let inst = build_dgp(&DgpSpec::new(DgpKind::RewardFiltered).with_seed(seed)).unwrap();
        for pol in [&inst.behavior, &inst.evaluation] {
            let p = pol.action_probabilities(t, &x);
            prop_assert_eq!(p.len(), 2);
            prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn simulation_is_reproducible() {
    let inst = build_dgp(&DgpSpec::new(DgpKind::RewardFiltered).with_seed(1)).unwrap();
    let a = inst.simulate(&inst.behavior, 30, 7).unwrap();
    let b = inst.simulate(&inst.behavior, 30, 7).unwrap();
    let c = inst.simulate(&inst.behavior, 30, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(build_dgp(&inst.spec).unwrap(), inst);
}

#[test]
fn evaluation_is_deterministic_given_seed() {
    let inst = build_dgp(&short_one_d(4)).unwrap();
    let ds = inst.simulate(&inst.behavior, 200, 2).unwrap();
    let cfg = EvalConfig {
        seed: 17,
        ..Default::default()
    };
    let a = evaluate_policy(&ds, &inst.evaluation, &cfg).unwrap();
    let b = evaluate_policy(&ds, &inst.evaluation, &cfg).unwrap();
    assert_eq!(a.tau, b.tau);
    assert!((1..=4).all(|t| a.tau.is_fitted(t)));
}

#[test]
fn huge_penalty_leaves_only_the_constant() {
    let inst = build_dgp(&short_one_d(3)).unwrap();
    let ds = inst.simulate(&inst.behavior, 200, 3).unwrap();
    let cfg = EvalConfig {
        tau_regularizer: RegressorSpec::Lasso { lambda: 1e6 },
        ..Default::default()
    };
    let ev = evaluate_policy(&ds, &inst.evaluation, &cfg).unwrap();
    for t in 1..=3 {
        let m = ev.tau.linear(t, 1).unwrap();
        // state_only basis is [s, 1]
        assert_eq!(m.coef[0], 0.0, "t={t}");
    }
}

#[test]
fn optimization_alternates_folds_and_is_reproducible() {
    let inst = build_dgp(&short_one_d(2)).unwrap();
    let ds = inst.simulate(&inst.behavior, 300, 5).unwrap();
    let cfg = OptConfig {
        seed: 3,
        ..Default::default()
    };
    let a = optimize_policy(&ds, &cfg).unwrap();
    let b = optimize_policy(&ds, &cfg).unwrap();
    assert_eq!(a.stage_fold, vec![2, 3]);
    assert_eq!(a.stage_fold, vec![stage_fold(1), stage_fold(2)]);
    assert_eq!(a.tau, b.tau);
    assert_eq!(a.policy, b.policy);
}

fn tiny_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(
        short_one_d(3),
        vec![Method::FqePlain, Method::OrthDiffQ],
        vec![40, 80],
    );
    cfg.replications = 2;
    cfg.timesteps = Some(vec![1, 3]);
    cfg.oracle = OracleSettings {
        grid_size: 20,
        rollouts: 10,
    };
    cfg.seed = 12;
    cfg
}

#[test]
fn experiment_output_is_deterministic_and_complete() {
    let cfg = tiny_experiment();
    let a = run_experiment_with_jobs(&cfg, 1).unwrap();
    let b = run_experiment_with_jobs(&cfg, 3).unwrap();
    let csv = |r| {
        let mut buf = Vec::new();
        write_report_csv(r, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let (ca, cb) = (csv(&a), csv(&b));
    // runtimes are not recorded by default, so the files match byte for byte
    assert_eq!(ca, cb);
    assert_eq!(ca.lines().count(), 1 + 2 * 2 * 2 * 2);
    assert!(a.cells.iter().all(|c| c.error.is_none()));
    assert!(a.aggregate(Method::OrthDiffQ, 80, None).is_some());
}

#[test]
fn report_files_round_trip() {
    let cfg = tiny_experiment();
    let report = run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(
        &report,
        dir.path(),
        &[ReportFormat::Csv, ReportFormat::Json],
    )
    .unwrap();
    assert_eq!(written.len(), 2);
    let back = read_report_json(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, report);

    let empty = tauq::harness::ExperimentReport {
        cells: vec![],
        aggregates: vec![],
        ..report
    };
    let mut buf = Vec::new();
    write_report_csv(&empty, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("method,n,replication,t,normalized_mse"));
}

#[test]
fn config_rejects_unknown_fields_and_bad_grids() {
    let cfg = tiny_experiment();
    let mut v = serde_json::to_value(&cfg).unwrap();
    assert!(ExperimentConfig::from_json(&v.to_string()).is_ok());
    v["bogus"] = serde_json::json!(1);
    assert!(ExperimentConfig::from_json(&v.to_string())
        .unwrap_err()
        .is_config());
    let mut bad = cfg.clone();
    bad.n_grid = vec![80, 40];
    assert!(bad.validate().unwrap_err().is_config());
    let mut bad = cfg;
    bad.n_grid = vec![5];
    assert!(bad.validate().is_err());
}
