use nalgebra::{DMatrix, DVector};

use super::{check_inputs, LinearModel, SolverOptions};
use crate::error::{Result, TauqError};

/// Minimizes `Σ w_i (y_i − b − x_iᵀθ)² + λ2 Σ_j pf_j θ_j²`.
///
/// Solved as an augmented least-squares problem through an SVD, so `λ2 = 0` on a
/// rank-deficient design returns the minimum-norm solution.
pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    lambda2: f64,
    opts: &SolverOptions,
) -> Result<LinearModel> {
    let w = check_inputs(x, y, w)?;
    if !(lambda2 >= 0.0) || !lambda2.is_finite() {
        return Err(TauqError::InvalidArgument(format!(
            "ridge penalty {lambda2} must be >= 0"
        )));
    }
    let (n, p) = x.shape();
    opts.validate(p)?;

    let sw: f64 = w.iter().sum();
    let (x_mean, y_mean) = if opts.fit_intercept {
        let xm: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| w[i] * x[(i, j)]).sum::<f64>() / sw)
            .collect();
        let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
        (xm, ym)
    } else {
        (vec![0.0; p], 0.0)
    };

    if p == 0 {
        return Ok(LinearModel {
            coef: vec![],
            intercept: y_mean,
            support: None,
            converged: true,
        });
    }

    let penalized: Vec<usize> = (0..p)
        .filter(|&j| lambda2 * opts.penalty(j) > 0.0)
        .collect();
    let rows = n + penalized.len();
    let mut a = DMatrix::<f64>::zeros(rows, p);
    let mut b = DVector::<f64>::zeros(rows);
    for i in 0..n {
        let sq = w[i].sqrt();
        for j in 0..p {
            a[(i, j)] = sq * (x[(i, j)] - x_mean[j]);
        }
        b[i] = sq * (y[i] - y_mean);
    }
    for (k, &j) in penalized.iter().enumerate() {
        a[(n + k, j)] = (lambda2 * opts.penalty(j)).sqrt();
    }

    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (rows.max(p) as f64);
    let theta = svd
        .solve(&b, eps.max(f64::MIN_POSITIVE))
        .map_err(|e| TauqError::Numerical(format!("ridge solve failed: {e}")))?;
    let coef: Vec<f64> = theta.iter().copied().collect();
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(TauqError::Numerical(
            "ridge produced non-finite coefficients".into(),
        ));
    }
    let intercept = if opts.fit_intercept {
        y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>()
    } else {
        0.0
    };
    Ok(LinearModel {
        coef,
        intercept,
        support: None,
        converged: true,
    })
}
