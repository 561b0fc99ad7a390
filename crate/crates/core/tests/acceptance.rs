//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Pass criterion numbers as arguments to run a subset.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use tauq::dgp::{build_dgp, DgpKind, DgpSpec};
use tauq::harness::{
    jaccard, median, normalized_mse, run_experiment, spearman, ExperimentConfig, Method,
};
use tauq::nuisance::OracleNuisance;
use tauq::policy::PolicySpec;
use tauq::regress::{
    fit_krr, fit_lasso_cd, fit_ridge, lasso_lambda_max, logistic_gradient, Kernel, LogisticModel,
    RegressorSpec, SolverOptions,
};
use tauq::rlearner::{
    excess_variance_check, fit_tau_all, optimize_policy, orthogonality_check, NextAction,
    OptConfig, Perturbation, TabularMdp,
};
use tauq::rng::substream;
use tauq::tau::ContrastFunction;
use tauq::types::FeatureBasis;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [Criterion; 8] = [
        (1, "1d validation error decreases in n", c1_table_one),
        (2, "excess-variance identity", c2_excess_variance),
        (3, "orthogonality slopes", c3_orthogonality),
        (4, "noisy-nuisance robustness", c4_noisy_nuisances),
        (5, "sparse support recovery", c5_support),
        (6, "oracle-nuisance equivalence", c6_oracle),
        (7, "regression primitive oracles", c7_primitives),
        (8, "policy optimization sanity", c8_optimization),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} [{name}]: {verdict} ({}) in {:.1}s",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

/// Median over replications of the per-replication mean error over timesteps.
fn median_error(
    report: &tauq::harness::ExperimentReport,
    m: Method,
    n: usize,
    normalized: bool,
) -> f64 {
    let reps = report.config.replications;
    let per_rep: Vec<f64> = (0..reps)
        .filter_map(|r| {
            let v: Vec<f64> = report
                .cells_for(m, n)
                .into_iter()
                .filter(|c| c.replication == r)
                .filter_map(|c| if normalized { c.normalized_mse } else { c.mse })
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    median(&per_rep).unwrap_or(f64::NAN)
}

fn c1_table_one() -> Outcome {
    let ns = vec![50, 1250, 5000];
    let mut cfg = ExperimentConfig::new(
        DgpSpec::new(DgpKind::OneDValidation),
        vec![Method::FqePlain, Method::OrthDiffQ],
        ns.clone(),
    );
    cfg.replications = 20;
    cfg.seed = 2024;
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for m in [Method::FqePlain, Method::OrthDiffQ] {
        let med: Vec<f64> = ns
            .iter()
            .map(|&n| median_error(&report, m, n, false))
            .collect();
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let rho = spearman(&xs, &med);
        let last = med[2];
        let ok = rho == -1.0 && (1e-4..=1e-2).contains(&last);
        pass &= ok;
        detail.push(format!(
            "{m}: mse {:.2e}/{:.2e}/{:.2e} spearman {rho}",
            med[0], med[1], med[2]
        ));
    }
    outcome(pass, detail.join("; "))
}

fn c2_excess_variance() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..10u64 {
        let mut rng = substream(77, &[i]);
        let gamma = rng.random::<f64>();
        let mdp = TabularMdp::random(2 + (i as usize % 3), 2, gamma, 1000 + i);
        for next in [NextAction::Observed, NextAction::Integrated] {
            for t in 1..=2 {
                match excess_variance_check(&mdp, t, next) {
                    Ok(r) => worst = worst.max((r.lhs - r.rhs).abs()),
                    Err(e) => return outcome(false, e.to_string()),
                }
            }
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max |lhs - rhs| = {worst:.2e} over 10 instances"),
    )
}

fn c3_orthogonality() -> Outcome {
    let mdp = TabularMdp::random(4, 2, 0.9, 31);
    let eps = tauq::rlearner::default_eps_grid();
    let mut min_slope = f64::INFINITY;
    let mut max_naive = f64::NEG_INFINITY;
    for d in 0..3 {
        let dir = Perturbation::random(4, 500 + d);
        match orthogonality_check(&mdp, 1, &dir, &eps) {
            Ok(r) => {
                min_slope = min_slope.min(r.slope);
                max_naive = max_naive.max(r.naive_slope);
            }
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    outcome(
        min_slope >= 1.9 && max_naive <= 1.2,
        format!("residual slope min {min_slope:.3}, naive slope max {max_naive:.3}"),
    )
}

fn sparse_config(methods: Vec<Method>, n: usize, seed: u64) -> ExperimentConfig {
    let dgp = DgpSpec::new(DgpKind::RewardFiltered);
    let horizon = dgp.horizon;
    let mut cfg = ExperimentConfig::new(dgp, methods, vec![n]);
    cfg.replications = 20;
    cfg.seed = seed;
    cfg.timesteps = Some(vec![horizon]);
    cfg.nuisance.q_regressor = RegressorSpec::thresholded();
    cfg
}

fn c4_noisy_nuisances() -> Outcome {
    let cfg = sparse_config(
        vec![
            Method::TauTl,
            Method::TauTlNoisy,
            Method::FqeTl,
            Method::FqeTlNoisy,
        ],
        500,
        4,
    );
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let med = |m| median_error(&report, m, 500, true);
    let (tau, tau_noisy, fqe, fqe_noisy) = (
        med(Method::TauTl),
        med(Method::TauTlNoisy),
        med(Method::FqeTl),
        med(Method::FqeTlNoisy),
    );
    let r_tau = tau_noisy / tau;
    let r_fqe = fqe_noisy / fqe;
    outcome(
        r_tau <= 3.0 && r_fqe > r_tau,
        format!(
            "TAU-TL {tau:.3e} -> {tau_noisy:.3e} (x{r_tau:.2}); FQE-TL {fqe:.3e} -> {fqe_noisy:.3e} (x{r_fqe:.2})"
        ),
    )
}

fn c5_support() -> Outcome {
    let cfg = sparse_config(vec![Method::TauTl], 1000, 5);
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("experiment failed: {e}")),
    };
    let truth: Vec<usize> = (0..10).collect();
    let scores: Vec<f64> = report
        .cells_for(Method::TauTl, 1000)
        .iter()
        .map(|c| c.support.as_deref().map_or(0.0, |s| jaccard(s, &truth)))
        .collect();
    let hits = scores.iter().filter(|j| **j >= 0.8).count();
    outcome(
        hits * 5 >= scores.len() * 4,
        format!(
            "Jaccard >= 0.8 in {hits}/{} replications (median {:.2})",
            scores.len(),
            median(&scores).unwrap_or(0.0)
        ),
    )
}

fn c6_oracle() -> Outcome {
    let spec = DgpSpec {
        sigma_s: 0.0,
        evaluation: Some(PolicySpec::Uniform { n_actions: 2 }),
        seed: 6,
        ..DgpSpec::new(DgpKind::RewardFiltered)
    };
    let run = || -> tauq::Result<Vec<f64>> {
        let inst = build_dgp(&spec)?;
        let ds = inst.simulate(&inst.behavior, 5000, 60)?;
        let oracle = OracleNuisance::new(
            inst.linear_q(&inst.evaluation)?,
            inst.behavior.clone(),
            inst.evaluation.clone(),
        );
        let tau = fit_tau_all(
            &ds,
            &oracle,
            &FeatureBasis::state_only(ds.state_dim),
            &RegressorSpec::Ridge { lambda: 0.0 },
            NextAction::Integrated,
            &SolverOptions::default(),
            0,
        )?;
        (1..=ds.horizon)
            .map(|t| {
                let states = inst.sample_states(&inst.behavior, t, 500, 61 + t as u64)?;
                let grid = inst.oracle_tau_grid(&inst.evaluation, t, states, 200, 62 + t as u64);
                normalized_mse(&tau, &grid)
            })
            .collect()
    };
    match run() {
        Ok(errs) => {
            let worst = errs.iter().copied().fold(0.0, f64::max);
            outcome(
                worst <= 1e-3,
                format!("max normalized MSE over t = {worst:.2e}"),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn random_design<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Largest violation of the lasso KKT conditions, computed from scratch.
fn kkt_violation(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    lambda: f64,
    pf: &[f64],
    opts: &SolverOptions,
    coef: &[f64],
    intercept: f64,
) -> f64 {
    let (n, p) = x.shape();
    let nf = n as f64;
    let sw: f64 = w.iter().sum();
    let r: Vec<f64> = (0..n)
        .map(|i| y[i] - intercept - (0..p).map(|j| x[(i, j)] * coef[j]).sum::<f64>())
        .collect();
    let mut worst: f64 = 0.0;
    if opts.fit_intercept {
        worst = worst.max((0..n).map(|i| w[i] * r[i]).sum::<f64>().abs() / nf);
    }
    for j in 0..p {
        let mean = if opts.fit_intercept {
            (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>() / sw
        } else {
            0.0
        };
        let s = if opts.standardize {
            ((0..n)
                .map(|i| w[i] * (x[(i, j)] - mean).powi(2))
                .sum::<f64>()
                / nf)
                .sqrt()
        } else {
            1.0
        };
        let g = (0..n).map(|i| w[i] * x[(i, j)] * r[i]).sum::<f64>() / nf;
        let pen = lambda * pf[j] * s;
        let v = if coef[j] != 0.0 {
            (g - pen * coef[j].signum()).abs()
        } else {
            (g.abs() - pen).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn c7_primitives() -> Outcome {
    let mut rng = substream(7, &[]);
    // lasso subgradient optimality
    let mut kkt: f64 = 0.0;
    for k in 0..100 {
        let n = rng.random_range(20..60);
        let p = rng.random_range(3..10);
        let x = random_design(&mut rng, n, p);
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] * 2.0 - x[(i, 1)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let w: Vec<f64> = if k % 2 == 0 {
            vec![1.0; n]
        } else {
            (0..n).map(|_| rng.random_range(0.2..2.0)).collect()
        };
        let pf: Vec<f64> = (0..p)
            .map(|j| if j == p - 1 && k % 3 == 0 { 0.0 } else { 1.0 })
            .collect();
        let opts = SolverOptions {
            fit_intercept: k % 4 != 1,
            standardize: k % 5 != 2,
            penalty_factor: Some(pf.clone()),
            tol: 1e-12,
            ..SolverOptions::default()
        };
        let lmax = lasso_lambda_max(&x, &y, Some(&w), &opts).unwrap();
        let lambda = lmax * rng.random_range(0.01..0.9);
        let m = fit_lasso_cd(&x, &y, Some(&w), lambda, &opts).unwrap();
        kkt = kkt.max(kkt_violation(
            &x,
            &y,
            &w,
            lambda,
            &pf,
            &opts,
            &m.coef,
            m.intercept,
        ));
    }
    // lasso at zero penalty against the normal equations
    let mut ols_gap: f64 = 0.0;
    for _ in 0..20 {
        let (n, p) = (50, 4);
        let x = random_design(&mut rng, n, p);
        let y: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let opts = SolverOptions {
            tol: 1e-14,
            max_iters: 100_000,
            ..SolverOptions::default()
        };
        let m = fit_lasso_cd(&x, &y, None, 0.0, &opts).unwrap();
        let aug = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let beta = (aug.transpose() * &aug)
            .lu()
            .solve(&(aug.transpose() * DVector::from_column_slice(&y)))
            .unwrap();
        ols_gap = ols_gap.max((m.intercept - beta[0]).abs());
        for j in 0..p {
            ols_gap = ols_gap.max((m.coef[j] - beta[j + 1]).abs());
        }
        let r = fit_ridge(&x, &y, None, 0.0, &SolverOptions::default()).unwrap();
        for j in 0..p {
            ols_gap = ols_gap.max((r.coef[j] - beta[j + 1]).abs());
        }
    }
    // logistic gradient against central differences of an independent objective
    let mut grad_rel: f64 = 0.0;
    for _ in 0..10 {
        let (n, p, k) = (40, 3, 3);
        let x = random_design(&mut rng, n, p);
        let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let lam = 0.1;
        let theta: Vec<f64> = (0..(k - 1) * (p + 1))
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let objective = |th: &[f64]| -> f64 {
            let mut nll = 0.0;
            for i in 0..n {
                let mut eta = vec![0.0];
                for c in 0..k - 1 {
                    let b = &th[c * (p + 1)..(c + 1) * (p + 1)];
                    eta.push(b[0] + (0..p).map(|j| b[j + 1] * x[(i, j)]).sum::<f64>());
                }
                let lse = eta.iter().map(|e| e.exp()).sum::<f64>().ln();
                nll -= w[i] * (eta[y[i]] - lse);
            }
            let pen: f64 = (0..k - 1)
                .flat_map(|c| (1..=p).map(move |j| c * (p + 1) + j))
                .map(|i| th[i] * th[i])
                .sum();
            nll / n as f64 + 0.5 * lam * pen
        };
        let model = LogisticModel {
            n_classes: k,
            coef: (0..k - 1)
                .map(|c| theta[c * (p + 1) + 1..(c + 1) * (p + 1)].to_vec())
                .collect(),
            intercept: (0..k - 1).map(|c| theta[c * (p + 1)]).collect(),
            constant: None,
            converged: true,
        };
        let g = logistic_gradient(&model, &x, &y, Some(&w), lam).unwrap();
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (objective(&up) - objective(&dn)) / (2.0 * h);
            grad_rel = grad_rel.max((g[i] - fd).abs() / fd.abs().max(1e-3));
        }
    }
    // kernel ridge against a dense solve
    let mut krr_gap: f64 = 0.0;
    for n in 1..=5 {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (h, lam) = (0.7, 0.05);
        let m = fit_krr(&rows, &y, Kernel::Rbf { bandwidth: h }, lam).unwrap();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            (-d2 / (2.0 * h * h)).exp() + if i == j { lam * n as f64 } else { 0.0 }
        });
        let alpha = k.lu().solve(&DVector::from_column_slice(&y)).unwrap();
        for i in 0..n {
            krr_gap = krr_gap.max((m.dual_weights[i] - alpha[i]).abs());
        }
    }
    outcome(
        kkt <= 1e-6 && ols_gap <= 1e-8 && grad_rel <= 1e-5 && krr_gap <= 1e-10,
        format!(
            "kkt {kkt:.1e}, ols {ols_gap:.1e}, logistic grad {grad_rel:.1e}, krr {krr_gap:.1e}"
        ),
    )
}

fn c8_optimization() -> Outcome {
    let run = || -> tauq::Result<(f64, f64, f64)> {
        let inst = build_dgp(&DgpSpec::new(DgpKind::DominantAction).with_seed(8))?;
        let ds = inst.simulate(&inst.behavior, 2000, 80)?;
        let opt = optimize_policy(
            &ds,
            &OptConfig {
                seed: 81,
                ..OptConfig::default()
            },
        )?;
        let mut agree = f64::INFINITY;
        for t in 1..=ds.horizon {
            let states = inst.sample_states(&inst.behavior, t, 1000, 82 + t as u64)?;
            let hits = states
                .iter()
                .filter(|s| opt.tau.greedy_action(t, s) == 1)
                .count();
            agree = agree.min(hits as f64 / states.len() as f64);
        }
        let (diff, se) = inst.policy_value_difference(&opt.policy, &inst.behavior, 4000, 89);
        Ok((agree, diff, se))
    };
    match run() {
        Ok((agree, diff, se)) => outcome(
            agree >= 0.99 && diff - 2.576 * se > 0.0,
            format!(
                "agreement {:.1}% (worst t), value gain {diff:.3} +/- {:.3}",
                100.0 * agree,
                2.576 * se
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}
