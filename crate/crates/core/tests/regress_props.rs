use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tauq::regress::{
    fit_lasso_cd, fit_lasso_cd_traced, fit_logistic, fit_ridge, fit_thresholded_lasso,
    lasso_lambda_max, logistic_gradient, SolverOptions,
};

fn data(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = (0..n)
        .map(|i| 2.0 * x[(i, 0)] - x[(i, p - 1)] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

fn raw(fit_intercept: bool) -> SolverOptions {
    SolverOptions {
        standardize: false,
        fit_intercept,
        tol: 1e-12,
        max_iters: 100_000,
        ..Default::default()
    }
}

fn residual(x: &DMatrix<f64>, y: &[f64], coef: &[f64], b: f64) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| y[i] - b - (0..x.ncols()).map(|j| x[(i, j)] * coef[j]).sum::<f64>())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lasso_satisfies_subgradient_conditions(
        seed in any::<u64>(), n in 8usize..40, p in 1usize..8, frac in 0.01f64..1.2, icpt in any::<bool>()
    ) {
        let (x, y) = data(n, p, seed);
        let opts = raw(icpt);
        let lam = frac * lasso_lambda_max(&x, &y, None, &opts).unwrap();
        let m = fit_lasso_cd(&x, &y, None, lam, &opts).unwrap();
        prop_assert!(m.converged);
        let r = residual(&x, &y, &m.coef, m.intercept);
        if icpt {
            prop_assert!(r.iter().sum::<f64>().abs() / (n as f64) < 1e-8);
        }
        for j in 0..p {
            let g = (0..n).map(|i| x[(i, j)] * r[i]).sum::<f64>() / n as f64;
            if m.coef[j] == 0.0 {
                prop_assert!(g.abs() <= lam + 1e-6, "j={} |g|={} lam={}", j, g.abs(), lam);
            } else {
                prop_assert!((g - lam * m.coef[j].signum()).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn coordinate_descent_never_increases_the_objective(seed in any::<u64>(), n in 8usize..40, p in 1usize..10, frac in 0.0f64..1.0) {
        let (x, y) = data(n, p, seed);
        let opts = SolverOptions::default();
        let lam = frac * lasso_lambda_max(&x, &y, None, &opts).unwrap();
        let (_, trace) = fit_lasso_cd_traced(&x, &y, None, lam, &opts).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn penalty_above_lambda_max_gives_zero(seed in any::<u64>(), n in 5usize..30, p in 1usize..6, scale in 1.0f64..10.0) {
        let (x, y) = data(n, p, seed);
        let opts = SolverOptions::default();
        let lam = scale * lasso_lambda_max(&x, &y, None, &opts).unwrap();
        let m = fit_lasso_cd(&x, &y, None, lam, &opts).unwrap();
        prop_assert!(m.coef.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn zero_penalty_lasso_is_least_squares(seed in any::<u64>(), n in 12usize..40, p in 1usize..5) {
        let (x, y) = data(n, p, seed);
        let opts = raw(true);
        let a = fit_lasso_cd(&x, &y, None, 0.0, &opts).unwrap();
        let b = fit_ridge(&x, &y, None, 0.0, &opts).unwrap();
        for (u, v) in a.coef.iter().zip(&b.coef) {
            prop_assert!((u - v).abs() < 1e-8);
        }
        prop_assert!((a.intercept - b.intercept).abs() < 1e-8);
    }

    #[test]
    fn thresholded_refit_is_ols_on_support(seed in any::<u64>(), n in 20usize..50, p in 2usize..8, frac in 0.05f64..0.6) {
        let (x, y) = data(n, p, seed);
        let opts = SolverOptions::default();
        let lam = frac * lasso_lambda_max(&x, &y, None, &opts).unwrap();
        let m = fit_thresholded_lasso(&x, &y, None, lam, 0.5 * lam, &opts).unwrap();
        let support = m.support.clone().unwrap();
        for j in 0..p {
            if !support.contains(&j) {
                prop_assert_eq!(m.coef[j], 0.0);
            }
        }
        let sub = x.select_columns(support.iter());
        let ols = fit_ridge(&sub, &y, None, 0.0, &opts).unwrap();
        for (k, &j) in support.iter().enumerate() {
            prop_assert!((m.coef[j] - ols.coef[k]).abs() < 1e-8);
        }
        prop_assert!((m.intercept - ols.intercept).abs() < 1e-8);
    }

    #[test]
    fn logistic_probabilities_are_valid_and_stationary(seed in any::<u64>(), n in 20usize..60, lam in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<usize> = (0..n).map(|i| usize::from(x[(i, 0)] + rng.sample::<f64, _>(StandardNormal) > 0.0)).collect();
        let m = fit_logistic(&x, &y, None, lam, &SolverOptions::default()).unwrap();
        for i in 0..n {
            let p = m.predict_proba_row(&[x[(i, 0)], x[(i, 1)]]);
            prop_assert!(p.iter().all(|v| *v > 0.0 && *v < 1.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let g = logistic_gradient(&m, &x, &y, None, lam).unwrap();
        prop_assert!(g.iter().all(|v| v.abs() < 1e-6), "{:?}", g);
    }
}

#[test]
fn single_coordinate_soft_threshold() {
    let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    let m = fit_lasso_cd(&x, &[1.0, -1.0], None, 0.5, &raw(false)).unwrap();
    assert!((m.coef[0] - 0.5).abs() < 1e-12);
    let grid_min = (0..=2000)
        .map(|k| k as f64 / 1000.0)
        .min_by(|a, b| {
            let f = |c: f64| ((1.0 - c).powi(2) + (-1.0 + c).powi(2)) / 4.0 + 0.5 * c.abs();
            f(*a).total_cmp(&f(*b))
        })
        .unwrap();
    assert!((grid_min - 0.5).abs() < 1e-3);
}

#[test]
fn thresholded_lasso_recovers_single_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 500;
    let x = DMatrix::from_fn(n, 11, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y: Vec<f64> = (0..n)
        .map(|i| 3.0 * x[(i, 1)] + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let opts = SolverOptions::default();
    let lam = 0.1 * lasso_lambda_max(&x, &y, None, &opts).unwrap();
    let m = fit_thresholded_lasso(&x, &y, None, lam, 0.5 * lam, &opts).unwrap();
    assert_eq!(m.support, Some(vec![1]));
    assert!((m.coef[1] - 3.0).abs() < 0.1);
}

#[test]
fn thresholded_extremes() {
    let (x, y) = data(30, 4, 2);
    let opts = SolverOptions::default();
    let none = fit_thresholded_lasso(&x, &y, None, 0.1, f64::INFINITY, &opts).unwrap();
    assert!(none.coef.iter().all(|c| *c == 0.0));
    let all = fit_thresholded_lasso(&x, &y, None, 0.0, 0.0, &opts).unwrap();
    let ols = fit_ridge(&x, &y, None, 0.0, &opts).unwrap();
    for (a, b) in all.coef.iter().zip(&ols.coef) {
        assert!((a - b).abs() < 1e-8);
    }
}
