use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{
    check_inputs, cv_select_lambda, default_lambda_grid, fit_ridge, LinearModel, SolverOptions,
};
use crate::error::{Result, TauqError};

/// How the stage-one penalty of a (thresholded) lasso is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum LambdaRule {
    Fixed {
        value: f64,
    },
    /// Minimizer of K-fold held-out squared loss over the default grid.
    Cv {
        #[serde(default = "default_grid")]
        grid_size: usize,
        #[serde(default = "default_folds")]
        folds: usize,
    },
    /// `λ = c·σ̂·Φ⁻¹(1 − α/2p)/√n` with `σ̂` re-estimated from post-lasso residuals.
    Universal {
        #[serde(default = "default_multiplier")]
        multiplier: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_iterations")]
        iterations: usize,
    },
}

fn default_grid() -> usize {
    20
}
fn default_folds() -> usize {
    5
}
fn default_multiplier() -> f64 {
    1.1
}
fn default_alpha() -> f64 {
    0.05
}
fn default_iterations() -> usize {
    3
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Universal {
            multiplier: default_multiplier(),
            alpha: default_alpha(),
            iterations: default_iterations(),
        }
    }
}

/// Centered/scaled copy of a weighted design, column-major.
struct Prepared {
    n: usize,
    cols: Vec<Vec<f64>>,
    w: Vec<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    /// `(1/n) Σ w z²` per column; zero marks a degenerate column.
    curvature: Vec<f64>,
    pf: Vec<f64>,
}

impl Prepared {
    fn new(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>, opts: &SolverOptions) -> Result<Self> {
        let w = check_inputs(x, y, w)?;
        let (n, p) = x.shape();
        opts.validate(p)?;
        let nf = n as f64;
        let sw: f64 = w.iter().sum();
        let y_mean = if opts.fit_intercept {
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw
        } else {
            0.0
        };
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut cols = Vec::with_capacity(p);
        let mut x_mean = Vec::with_capacity(p);
        let mut scale = Vec::with_capacity(p);
        let mut curvature = Vec::with_capacity(p);
        for j in 0..p {
            let c = x.column(j);
            let m = if opts.fit_intercept {
                c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw
            } else {
                0.0
            };
            let mut z: Vec<f64> = c.iter().map(|v| v - m).collect();
            let ms = z.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>() / nf;
            let s = if opts.standardize && ms > 0.0 {
                ms.sqrt()
            } else {
                1.0
            };
            if s != 1.0 {
                z.iter_mut().for_each(|v| *v /= s);
            }
            let curv = if ms > 1e-300 { ms / (s * s) } else { 0.0 };
            cols.push(z);
            x_mean.push(m);
            scale.push(s);
            curvature.push(curv);
        }
        let pf = (0..p).map(|j| opts.penalty(j)).collect();
        Ok(Prepared {
            n,
            cols,
            w,
            y: yc,
            x_mean,
            scale,
            y_mean,
            curvature,
            pf,
        })
    }

    fn p(&self) -> usize {
        self.cols.len()
    }

    fn residual(&self, beta: &[f64]) -> Vec<f64> {
        let mut r = self.y.clone();
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 {
                for (ri, zi) in r.iter_mut().zip(&self.cols[j]) {
                    *ri -= b * zi;
                }
            }
        }
        r
    }

    fn objective(&self, lambda: f64, beta: &[f64], r: &[f64]) -> f64 {
        let loss = r
            .iter()
            .zip(&self.w)
            .map(|(ri, wi)| wi * ri * ri)
            .sum::<f64>()
            / (2.0 * self.n as f64);
        loss + lambda
            * beta
                .iter()
                .zip(&self.pf)
                .map(|(b, f)| f * b.abs())
                .sum::<f64>()
    }

    /// Cyclic coordinate descent from `beta`; returns (sweeps, converged).
    fn solve(
        &self,
        lambda: f64,
        beta: &mut [f64],
        opts: &SolverOptions,
        mut trace: Option<&mut Vec<f64>>,
    ) -> (usize, bool) {
        let nf = self.n as f64;
        let mut r = self.residual(beta);
        if let Some(t) = trace.as_deref_mut() {
            t.push(self.objective(lambda, beta, &r));
        }
        for sweep in 1..=opts.max_iters {
            let mut max_delta = 0.0f64;
            for j in 0..self.p() {
                let a = self.curvature[j];
                if a == 0.0 {
                    beta[j] = 0.0;
                    continue;
                }
                let z = &self.cols[j];
                let g: f64 = z
                    .iter()
                    .zip(&r)
                    .zip(&self.w)
                    .map(|((zi, ri), wi)| wi * zi * ri)
                    .sum::<f64>()
                    / nf;
                let old = beta[j];
                let new = soft_threshold(g + a * old, lambda * self.pf[j]) / a;
                let delta = new - old;
                if delta != 0.0 {
                    for (ri, zi) in r.iter_mut().zip(z) {
                        *ri -= delta * zi;
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(lambda, beta, &r));
            }
            if max_delta < opts.tol {
                return (sweep, true);
            }
        }
        (opts.max_iters, false)
    }

    fn to_model(&self, beta: &[f64], converged: bool) -> LinearModel {
        let coef: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let intercept = self.y_mean
            - coef
                .iter()
                .zip(&self.x_mean)
                .map(|(c, m)| c * m)
                .sum::<f64>();
        LinearModel {
            coef,
            intercept,
            support: None,
            converged,
        }
    }

    /// Residual after fitting only the unpenalized columns.
    fn unpenalized_residual(&self) -> Result<Vec<f64>> {
        let free: Vec<usize> = (0..self.p())
            .filter(|&j| self.pf[j] == 0.0 && self.curvature[j] > 0.0)
            .collect();
        if free.is_empty() {
            return Ok(self.y.clone());
        }
        let z = DMatrix::from_fn(self.n, free.len(), |i, k| self.cols[free[k]][i]);
        let fit = fit_ridge(
            &z,
            &self.y,
            Some(&self.w),
            0.0,
            &SolverOptions::no_intercept(),
        )?;
        let mut beta = vec![0.0; self.p()];
        for (k, &j) in free.iter().enumerate() {
            beta[j] = fit.coef[k];
        }
        Ok(self.residual(&beta))
    }

    fn lambda_max(&self) -> Result<f64> {
        let r = self.unpenalized_residual()?;
        let nf = self.n as f64;
        let mut lmax = 0.0f64;
        for j in 0..self.p() {
            if self.pf[j] > 0.0 && self.curvature[j] > 0.0 {
                let g = self.cols[j]
                    .iter()
                    .zip(&r)
                    .zip(&self.w)
                    .map(|((z, ri), wi)| wi * z * ri)
                    .sum::<f64>()
                    / nf;
                lmax = lmax.max(g.abs() / self.pf[j]);
            }
        }
        Ok(lmax)
    }
}

#[inline]
fn soft_threshold(v: f64, k: f64) -> f64 {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        0.0
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(TauqError::InvalidArgument(format!(
            "lasso penalty {lambda} must be >= 0"
        )));
    }
    Ok(())
}

/// Minimizes `(1/2n) Σ w_i (y_i − b − x_iᵀθ)² + λ1 Σ_j pf_j·s_j·|θ_j|` by cyclic
/// coordinate descent, where `s_j` is the column scale when `standardize` is set
/// (otherwise 1). Non-convergence is reported through `converged = false`.
pub fn fit_lasso_cd(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    lambda1: f64,
    opts: &SolverOptions,
) -> Result<LinearModel> {
    Ok(fit_lasso_cd_traced(x, y, w, lambda1, opts)?.0)
}

/// [`fit_lasso_cd`] that also returns the objective after every sweep
/// (the first entry is the objective at the zero start).
pub fn fit_lasso_cd_traced(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    lambda1: f64,
    opts: &SolverOptions,
) -> Result<(LinearModel, Vec<f64>)> {
    check_lambda(lambda1)?;
    let prep = Prepared::new(x, y, w, opts)?;
    let mut beta = vec![0.0; prep.p()];
    let mut trace = Vec::new();
    let (_, converged) = prep.solve(lambda1, &mut beta, opts, Some(&mut trace));
    Ok((prep.to_model(&beta, converged), trace))
}

/// Fits every penalty in `grid` in order, warm-starting each from the previous one.
pub(crate) fn lasso_path(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<LinearModel>> {
    let prep = Prepared::new(x, y, w, opts)?;
    let mut beta = vec![0.0; prep.p()];
    let mut out = Vec::with_capacity(grid.len());
    for &lam in grid {
        check_lambda(lam)?;
        let (_, converged) = prep.solve(lam, &mut beta, opts, None);
        out.push(prep.to_model(&beta, converged));
    }
    Ok(out)
}

/// Objective of [`fit_lasso_cd`] evaluated at `model`, in the original coordinates.
pub fn lasso_objective(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    lambda1: f64,
    model: &LinearModel,
    opts: &SolverOptions,
) -> Result<f64> {
    let prep = Prepared::new(x, y, w, opts)?;
    let n = x.nrows();
    let wv = check_inputs(x, y, w)?;
    let pred = model.predict(x);
    let loss = (0..n)
        .map(|i| wv[i] * (y[i] - pred[i]).powi(2))
        .sum::<f64>()
        / (2.0 * n as f64);
    let pen: f64 = model
        .coef
        .iter()
        .enumerate()
        .map(|(j, c)| prep.pf[j] * prep.scale[j] * c.abs())
        .sum();
    Ok(loss + lambda1 * pen)
}

/// Smallest penalty at which every penalized coefficient is zero.
pub fn lasso_lambda_max(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<f64> {
    Prepared::new(x, y, w, opts)?.lambda_max()
}

/// Lasso, then keep `{j : |β_j| > threshold}` (plus unpenalized columns) and refit
/// those columns by unpenalized least squares. `β` is on the standardized scale when
/// `opts.standardize` is set, so the threshold is comparable to `λ1`.
pub fn fit_thresholded_lasso(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    lambda1: f64,
    threshold: f64,
    opts: &SolverOptions,
) -> Result<LinearModel> {
    check_lambda(lambda1)?;
    if !(threshold >= 0.0) {
        return Err(TauqError::InvalidArgument(format!(
            "threshold {threshold} must be >= 0"
        )));
    }
    let prep = Prepared::new(x, y, w, opts)?;
    let mut beta = vec![0.0; prep.p()];
    let (_, converged) = prep.solve(lambda1, &mut beta, opts, None);
    let support: Vec<usize> = (0..prep.p())
        .filter(|&j| prep.curvature[j] > 0.0 && (prep.pf[j] == 0.0 || beta[j].abs() > threshold))
        .collect();
    refit_on_support(x, y, w, &support, opts, converged, prep.y_mean)
}

fn refit_on_support(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    support: &[usize],
    opts: &SolverOptions,
    converged: bool,
    y_mean: f64,
) -> Result<LinearModel> {
    let p = x.ncols();
    let mut coef = vec![0.0; p];
    let mut intercept = if opts.fit_intercept { y_mean } else { 0.0 };
    if !support.is_empty() {
        let sub = x.select_columns(support.iter());
        let refit_opts = SolverOptions {
            penalty_factor: None,
            ..opts.clone()
        };
        let fit = fit_ridge(&sub, y, w, 0.0, &refit_opts)?;
        for (k, &j) in support.iter().enumerate() {
            coef[j] = fit.coef[k];
        }
        intercept = fit.intercept;
    }
    Ok(LinearModel {
        coef,
        intercept,
        support: Some(support.to_vec()),
        converged,
    })
}

/// Turns a [`LambdaRule`] into a concrete penalty for this problem.
pub fn resolve_lambda(
    rule: &LambdaRule,
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    opts: &SolverOptions,
    seed: u64,
) -> Result<f64> {
    match rule {
        LambdaRule::Fixed { value } => {
            check_lambda(*value)?;
            Ok(*value)
        }
        LambdaRule::Cv { grid_size, folds } => {
            let lmax = lasso_lambda_max(x, y, w, opts)?;
            let grid = default_lambda_grid(lmax, *grid_size);
            Ok(cv_select_lambda(x, y, w, &grid, *folds, seed, opts)?.lambda)
        }
        LambdaRule::Universal {
            multiplier,
            alpha,
            iterations,
        } => {
            if !(*alpha > 0.0 && *alpha < 1.0) || !(*multiplier > 0.0) {
                return Err(TauqError::Config(
                    "universal penalty needs 0 < alpha < 1 and multiplier > 0".into(),
                ));
            }
            let prep = Prepared::new(x, y, w, opts)?;
            let n = prep.n as f64;
            let n_pen = prep.pf.iter().filter(|f| **f > 0.0).count().max(1) as f64;
            let n_free =
                prep.pf.iter().filter(|f| **f == 0.0).count() + usize::from(opts.fit_intercept);
            let quantile = Normal::standard().inverse_cdf(1.0 - alpha / (2.0 * n_pen));
            let sw: f64 = prep.w.iter().sum();
            let sigma_of = |r: &[f64], k: usize| {
                let rss = r.iter().zip(&prep.w).map(|(a, b)| b * a * a).sum::<f64>();
                let dof = (n - k as f64).max(1.0);
                (rss / sw * n / dof).sqrt()
            };
            let mut sigma = sigma_of(&prep.unpenalized_residual()?, n_free);
            let lambda_of = |s: f64| multiplier * s * quantile / n.sqrt();
            for _ in 0..*iterations {
                let lam = lambda_of(sigma);
                let mut beta = vec![0.0; prep.p()];
                prep.solve(lam, &mut beta, opts, None);
                let support: Vec<usize> = (0..prep.p())
                    .filter(|&j| beta[j] != 0.0 || (prep.pf[j] == 0.0 && prep.curvature[j] > 0.0))
                    .collect();
                let post = refit_on_support(x, y, w, &support, opts, true, prep.y_mean)?;
                let pred = post.predict(x);
                let r: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
                let next = sigma_of(&r, support.len() + usize::from(opts.fit_intercept));
                if !(next > 0.0) {
                    break;
                }
                sigma = next;
            }
            Ok(lambda_of(sigma))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    fn raw() -> SolverOptions {
        SolverOptions {
            standardize: false,
            fit_intercept: false,
            tol: 1e-12,
            ..Default::default()
        }
    }

    /// 1-d grid search of the single-coordinate objective.
    fn grid_argmin(f: impl Fn(f64) -> f64) -> f64 {
        let mut best = (0.0, f64::INFINITY);
        let mut b = -3.0;
        while b <= 3.0 {
            let v = f(b);
            if v < best.1 {
                best = (b, v);
            }
            b += 1e-4;
        }
        best.0
    }

    #[test]
    fn single_coordinate_soft_threshold() {
        let x = col(&[1.0, -1.0]);
        let y = [1.0, -1.0];
        let m = fit_lasso_cd(&x, &y, None, 0.5, &raw()).unwrap();
        let oracle =
            grid_argmin(|b| ((1.0 - b).powi(2) + (-1.0 + b).powi(2)) / 4.0 + 0.5 * b.abs());
        assert!((oracle - 0.5).abs() < 1e-3);
        assert!((m.coef[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn null_threshold_zeroes_everything() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -1.0, 2.0, 0.3, -0.7, 2.0, 0.1]);
        let y = [1.0, -2.0, 0.5, 0.3];
        let o = raw();
        let lmax = lasso_lambda_max(&x, &y, None, &o).unwrap();
        let direct = (0..2)
            .map(|j| (0..4).map(|i| x[(i, j)] * y[i]).sum::<f64>().abs() / 4.0)
            .fold(0.0, f64::max);
        assert!((lmax - direct).abs() < 1e-14);
        let m = fit_lasso_cd(&x, &y, None, lmax, &o).unwrap();
        assert!(m.coef.iter().all(|c| *c == 0.0));
        let m = fit_lasso_cd(&x, &y, None, lmax * 0.9, &o).unwrap();
        assert!(m.coef.iter().any(|c| *c != 0.0));
    }

    #[test]
    fn thresholded_extremes() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let y = [1.0, 2.0, 3.0];
        let m = fit_thresholded_lasso(&x, &y, None, 0.1, f64::INFINITY, &raw()).unwrap();
        assert!(m.coef.iter().all(|c| *c == 0.0));
        assert_eq!(m.support, Some(vec![]));
        let m0 = fit_thresholded_lasso(&x, &y, None, 0.0, 0.0, &raw()).unwrap();
        let ols = fit_ridge(&x, &y, None, 0.0, &raw()).unwrap();
        for j in 0..2 {
            assert!((m0.coef[j] - ols.coef[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn unpenalized_column_survives_large_penalty() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, -1.0, 3.0, 1.0, 4.0, -1.0]);
        let y = [2.0, -1.0, 2.0, -1.0];
        let o = SolverOptions {
            penalty_factor: Some(vec![1.0, 0.0]),
            ..raw()
        };
        let m = fit_lasso_cd(&x, &y, None, 1e6, &o).unwrap();
        assert_eq!(m.coef[0], 0.0);
        assert!(m.coef[1] != 0.0);
    }
}
