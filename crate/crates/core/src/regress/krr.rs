use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TauqError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Kernel {
    /// `exp(−‖x − y‖² / 2h²)`
    Rbf { bandwidth: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Rbf { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel {
    pub dual_weights: Vec<f64>,
    pub train_x: Vec<Vec<f64>>,
    pub kernel: Kernel,
    pub lambda: f64,
    /// Added to every prediction (the training mean when the response was centered).
    #[serde(default)]
    pub offset: f64,
    /// Diagonal jitter that had to be added for the factorization; zero normally.
    #[serde(default)]
    pub jitter: f64,
}

impl KrrModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.offset
            + self
                .train_x
                .iter()
                .zip(&self.dual_weights)
                .map(|(xi, a)| a * self.kernel.eval(xi, x))
                .sum::<f64>()
    }
}

/// Median pairwise Euclidean distance (over at most 500 evenly spaced rows).
/// Falls back to 1 when all rows coincide.
pub fn median_heuristic_bandwidth(rows: &[Vec<f64>]) -> f64 {
    let stride = rows.len().div_ceil(500).max(1);
    let pts: Vec<&Vec<f64>> = rows.iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d2: f64 = pts[i]
                .iter()
                .zip(pts[j])
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            d.push(d2.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn check(rows: &[Vec<f64>], y: &[f64], kernel: &Kernel, lambda: f64) -> Result<()> {
    if rows.is_empty() || rows.len() != y.len() {
        return Err(TauqError::InvalidArgument(
            "kernel ridge needs matching nonempty inputs".into(),
        ));
    }
    let Kernel::Rbf { bandwidth } = kernel;
    if !(*bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(TauqError::InvalidArgument(format!(
            "bandwidth {bandwidth} must be > 0"
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(TauqError::InvalidArgument(format!(
            "kernel ridge penalty {lambda} must be >= 0"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TauqError::InvalidArgument(
            "non-finite value in kernel ridge input".into(),
        ));
    }
    Ok(())
}

fn gram(rows: &[Vec<f64>], kernel: &Kernel) -> DMatrix<f64> {
    let n = rows.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = kernel.eval(&rows[i], &rows[i]);
        for j in 0..i {
            let v = kernel.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky solve of `a·x = b`, adding growing diagonal jitter on failure.
fn chol_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let base = a.diagonal().amax().max(1e-300) * 1e-10;
    let mut jitter = 0.0;
    let mut a = a;
    for _ in 0..10 {
        if let Some(ch) = a.clone().cholesky() {
            return Ok((ch.solve(b), jitter));
        }
        let add = if jitter == 0.0 { base } else { jitter * 9.0 };
        for i in 0..a.nrows() {
            a[(i, i)] += add;
        }
        jitter += add;
    }
    Err(TauqError::Numerical(
        "kernel system is not positive definite".into(),
    ))
}

/// Solves `(K + λ·n·I)α = y`.
pub fn fit_krr(rows: &[Vec<f64>], y: &[f64], kernel: Kernel, lambda: f64) -> Result<KrrModel> {
    check(rows, y, &kernel, lambda)?;
    let n = rows.len();
    let mut a = gram(rows, &kernel);
    for i in 0..n {
        a[(i, i)] += lambda * n as f64;
    }
    let (alpha, jitter) = chol_solve(a, &DVector::from_column_slice(y))?;
    Ok(KrrModel {
        dual_weights: alpha.iter().copied().collect(),
        train_x: rows.to_vec(),
        kernel,
        lambda,
        offset: 0.0,
        jitter,
    })
}

/// Minimizer of `Σ w_i (y_i − f(x_i))² + λ·n·‖f‖²_H`, i.e. `(WK + λnI)α = Wy`.
///
/// Solved as `(W^½ K W^½ + λnI)γ = W^½ y` with `α = W^½ γ`, which stays symmetric.
pub fn fit_krr_weighted(
    rows: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    kernel: Kernel,
    lambda: f64,
) -> Result<KrrModel> {
    check(rows, y, &kernel, lambda)?;
    let n = rows.len();
    if w.len() != n || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(TauqError::InvalidArgument(
            "weights must be finite, >= 0 and match rows".into(),
        ));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(TauqError::InvalidArgument(
            "all sample weights are zero".into(),
        ));
    }
    let sq: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let mut a = gram(rows, &kernel);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] *= sq[i] * sq[j];
        }
        a[(i, i)] += lambda * n as f64;
    }
    let b = DVector::from_fn(n, |i, _| sq[i] * y[i]);
    let (gamma, jitter) = chol_solve(a, &b)?;
    Ok(KrrModel {
        dual_weights: (0..n).map(|i| sq[i] * gamma[i]).collect(),
        train_x: rows.to_vec(),
        kernel,
        lambda,
        offset: 0.0,
        jitter,
    })
}
