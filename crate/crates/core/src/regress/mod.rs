//! Regression primitives: ridge/OLS, coordinate-descent lasso, thresholded lasso,
//! cross-validation, logistic classification and kernel ridge regression.
//!
//! Conventions shared by every linear fit:
//! - `x` is an `n × p` design without a constant column; the intercept is a separate
//!   unpenalized parameter controlled by [`SolverOptions::fit_intercept`].
//! - `penalty_factor[j]` scales the penalty of column `j`; `0` leaves it unpenalized.
//! - Sample weights multiply each row's squared loss.

mod cv;
mod krr;
mod lasso;
mod logistic;
mod ridge;

pub use cv::{cv_select_lambda, default_lambda_grid, CvResult};
pub use krr::{fit_krr, fit_krr_weighted, median_heuristic_bandwidth, Kernel, KrrModel};
pub use lasso::{
    fit_lasso_cd, fit_lasso_cd_traced, fit_thresholded_lasso, lasso_lambda_max, lasso_objective,
    resolve_lambda, LambdaRule,
};
pub use logistic::{
    fit_logistic, fit_multinomial, logistic_gradient, logistic_objective, LogisticModel,
};
pub use ridge::fit_ridge;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};

/// Solver controls for iterative fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Coordinate descent stops once the largest coefficient change in a sweep is below `tol`.
    pub tol: f64,
    pub standardize: bool,
    pub fit_intercept: bool,
    #[serde(default)]
    pub penalty_factor: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 10_000,
            tol: 1e-9,
            standardize: true,
            fit_intercept: true,
            penalty_factor: None,
        }
    }
}

impl SolverOptions {
    pub fn no_intercept() -> Self {
        SolverOptions {
            fit_intercept: false,
            ..Default::default()
        }
    }

    pub(crate) fn validate(&self, p: usize) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(TauqError::InvalidArgument(
                "solver options need tol > 0 and max_iters >= 1".into(),
            ));
        }
        if let Some(pf) = &self.penalty_factor {
            if pf.len() != p || pf.iter().any(|v| !(*v >= 0.0)) {
                return Err(TauqError::InvalidArgument(format!(
                    "penalty_factor must have {p} nonnegative entries"
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn penalty(&self, j: usize) -> f64 {
        self.penalty_factor.as_ref().map_or(1.0, |pf| pf[j])
    }
}

/// Linear predictor `intercept + coefᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
    /// Columns allowed to be nonzero (thresholded fits only).
    #[serde(default)]
    pub support: Option<Vec<usize>>,
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

impl LinearModel {
    pub fn zeros(p: usize) -> Self {
        LinearModel {
            coef: vec![0.0; p],
            intercept: 0.0,
            support: None,
            converged: true,
        }
    }

    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.intercept
                    + self
                        .coef
                        .iter()
                        .enumerate()
                        .map(|(j, c)| c * x[(i, j)])
                        .sum::<f64>()
            })
            .collect()
    }
}

/// A fitted regression function over feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedRegressor {
    Linear(LinearModel),
    Kernel(KrrModel),
}

impl FittedRegressor {
    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            FittedRegressor::Linear(m) => m.predict_row(x),
            FittedRegressor::Kernel(m) => m.predict_row(x),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match self {
            FittedRegressor::Linear(m) => Some(m),
            FittedRegressor::Kernel(_) => None,
        }
    }
}

/// Which regression to run, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegressorSpec {
    Ridge {
        lambda: f64,
    },
    Lasso {
        lambda: f64,
    },
    LassoCv {
        #[serde(default = "default_grid_size")]
        grid_size: usize,
        #[serde(default = "default_cv_folds")]
        folds: usize,
    },
    ThresholdedLasso {
        #[serde(default)]
        lambda: LambdaRule,
        /// Threshold as a multiple of the stage-one penalty.
        #[serde(default = "default_threshold_ratio")]
        threshold_ratio: f64,
    },
    /// Ridge restricted to a fixed column subset; other coefficients are zero.
    RidgeOnSupport {
        support: Vec<usize>,
        lambda: f64,
    },
    Krr {
        #[serde(default)]
        bandwidth: Option<f64>,
        lambda: f64,
        #[serde(default = "default_true")]
        center: bool,
    },
}

fn default_grid_size() -> usize {
    20
}
fn default_cv_folds() -> usize {
    5
}
fn default_threshold_ratio() -> f64 {
    0.5
}

impl RegressorSpec {
    /// Near-unpenalized least squares, the default Q-function regressor.
    pub fn default_q() -> Self {
        RegressorSpec::Ridge { lambda: 1e-6 }
    }

    pub fn thresholded() -> Self {
        RegressorSpec::ThresholdedLasso {
            lambda: LambdaRule::default(),
            threshold_ratio: 0.5,
        }
    }
}

/// Hyperparameters actually used by a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub lambda: Option<f64>,
    pub threshold: Option<f64>,
    #[serde(default)]
    pub cv_trace: Option<Vec<(f64, f64)>>,
}

/// Fits `spec` on `(x, y, w)`. `seed` drives any internal cross-validation split.
pub fn fit_regressor(
    spec: &RegressorSpec,
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    opts: &SolverOptions,
    seed: u64,
) -> Result<(FittedRegressor, FitInfo)> {
    match spec {
        RegressorSpec::Ridge { lambda } => Ok((
            FittedRegressor::Linear(fit_ridge(x, y, w, *lambda, opts)?),
            FitInfo {
                lambda: Some(*lambda),
                ..Default::default()
            },
        )),
        RegressorSpec::Lasso { lambda } => Ok((
            FittedRegressor::Linear(fit_lasso_cd(x, y, w, *lambda, opts)?),
            FitInfo {
                lambda: Some(*lambda),
                ..Default::default()
            },
        )),
        RegressorSpec::LassoCv { grid_size, folds } => {
            let lmax = lasso_lambda_max(x, y, w, opts)?;
            let grid = default_lambda_grid(lmax, *grid_size);
            let cv = cv_select_lambda(x, y, w, &grid, *folds, seed, opts)?;
            let model = fit_lasso_cd(x, y, w, cv.lambda, opts)?;
            Ok((
                FittedRegressor::Linear(model),
                FitInfo {
                    lambda: Some(cv.lambda),
                    threshold: None,
                    cv_trace: Some(grid.iter().copied().zip(cv.losses).collect()),
                },
            ))
        }
        RegressorSpec::ThresholdedLasso {
            lambda,
            threshold_ratio,
        } => {
            let lam = resolve_lambda(lambda, x, y, w, opts, seed)?;
            let threshold = threshold_ratio * lam;
            let model = fit_thresholded_lasso(x, y, w, lam, threshold, opts)?;
            Ok((
                FittedRegressor::Linear(model),
                FitInfo {
                    lambda: Some(lam),
                    threshold: Some(threshold),
                    cv_trace: None,
                },
            ))
        }
        RegressorSpec::RidgeOnSupport { support, lambda } => {
            let p = x.ncols();
            if let Some(j) = support.iter().find(|&&j| j >= p) {
                return Err(TauqError::Config(format!(
                    "support index {j} outside 0..{p}"
                )));
            }
            let sub = x.select_columns(support.iter());
            let sub_opts = SolverOptions {
                penalty_factor: opts
                    .penalty_factor
                    .as_ref()
                    .map(|pf| support.iter().map(|&j| pf[j]).collect()),
                ..opts.clone()
            };
            let fit = fit_ridge(&sub, y, w, *lambda, &sub_opts)?;
            let mut coef = vec![0.0; p];
            for (k, &j) in support.iter().enumerate() {
                coef[j] = fit.coef[k];
            }
            Ok((
                FittedRegressor::Linear(LinearModel {
                    coef,
                    intercept: fit.intercept,
                    support: Some(support.clone()),
                    converged: true,
                }),
                FitInfo {
                    lambda: Some(*lambda),
                    ..Default::default()
                },
            ))
        }
        RegressorSpec::Krr {
            bandwidth,
            lambda,
            center,
        } => {
            let rows = rows_of(x);
            let h = match bandwidth {
                Some(h) => *h,
                None => median_heuristic_bandwidth(&rows),
            };
            let kernel = Kernel::Rbf { bandwidth: h };
            let offset = if *center { weighted_mean(y, w) } else { 0.0 };
            let yc: Vec<f64> = y.iter().map(|v| v - offset).collect();
            let mut model = match w {
                Some(w) => fit_krr_weighted(&rows, &yc, w, kernel, *lambda)?,
                None => fit_krr(&rows, &yc, kernel, *lambda)?,
            };
            model.offset = offset;
            Ok((
                FittedRegressor::Kernel(model),
                FitInfo {
                    lambda: Some(*lambda),
                    ..Default::default()
                },
            ))
        }
    }
}

/// Row-major design to column-major matrix.
pub fn design_from_rows(rows: &[Vec<f64>], p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn weighted_mean(y: &[f64], w: Option<&[f64]>) -> f64 {
    match w {
        Some(w) => {
            let sw: f64 = w.iter().sum();
            y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw
        }
        None => y.iter().sum::<f64>() / y.len() as f64,
    }
}

/// Validates shapes and weights; returns the weight vector (ones when absent).
pub(crate) fn check_inputs(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = x.nrows();
    if n == 0 {
        return Err(TauqError::InvalidArgument("empty design".into()));
    }
    if y.len() != n {
        return Err(TauqError::InvalidArgument(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(TauqError::InvalidArgument(
            "non-finite value in regression input".into(),
        ));
    }
    let w = match w {
        Some(w) => {
            if w.len() != n {
                return Err(TauqError::InvalidArgument("weights length mismatch".into()));
            }
            if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(TauqError::InvalidArgument(
                    "weights must be finite and >= 0".into(),
                ));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    if w.iter().all(|v| *v == 0.0) {
        return Err(TauqError::InvalidArgument(
            "all sample weights are zero".into(),
        ));
    }
    Ok(w)
}
