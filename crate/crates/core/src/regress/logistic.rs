use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SolverOptions;
use crate::error::{Result, TauqError};

/// Multinomial logit with class 0 as reference; binary logistic is `n_classes = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub n_classes: usize,
    /// `coef[c - 1]` are the slopes of class `c` against class 0.
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    /// Set when some class had no weight and a constant model was returned.
    #[serde(default)]
    pub constant: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

impl LogisticModel {
    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        if let Some(p) = &self.constant {
            return p.clone();
        }
        let mut eta = Vec::with_capacity(self.n_classes);
        eta.push(0.0);
        for c in 0..self.n_classes - 1 {
            eta.push(
                self.intercept[c] + self.coef[c].iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            );
        }
        softmax(&eta)
    }

    /// Probability of class 1 for a binary model.
    pub fn prob1(&self, x: &[f64]) -> f64 {
        self.predict_proba_row(x)[1]
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in 0..self.n_classes - 1 {
            out.push(self.intercept[c]);
            out.extend_from_slice(&self.coef[c]);
        }
        out
    }
}

fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check(
    x: &DMatrix<f64>,
    y: &[usize],
    w: Option<&[f64]>,
    k: usize,
    lambda2: f64,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(TauqError::InvalidArgument(
            "need at least two classes".into(),
        ));
    }
    if let Some(c) = y.iter().find(|&&c| c >= k) {
        return Err(TauqError::InvalidArgument(format!(
            "label {c} outside 0..{k}"
        )));
    }
    if !(lambda2 >= 0.0) || !lambda2.is_finite() {
        return Err(TauqError::InvalidArgument(format!(
            "ridge penalty {lambda2} must be >= 0"
        )));
    }
    let yf: Vec<f64> = y.iter().map(|&c| c as f64).collect();
    super::check_inputs(x, &yf, w)
}

/// Binary logistic regression with ridge penalty `λ2/2·‖θ‖²` on the slopes.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    y: &[usize],
    w: Option<&[f64]>,
    lambda2: f64,
    opts: &SolverOptions,
) -> Result<LogisticModel> {
    fit_multinomial(x, y, 2, w, lambda2, opts)
}

/// Minimizes `(1/n) Σ w_i [−log p_{y_i}(x_i)] + λ2/2 Σ_c ‖θ_c‖²` by damped Newton.
///
/// The iteration runs on standardized columns; the penalty stays on the original
/// coefficients, so the answer does not depend on `opts.standardize`.
pub fn fit_multinomial(
    x: &DMatrix<f64>,
    y: &[usize],
    n_classes: usize,
    w: Option<&[f64]>,
    lambda2: f64,
    opts: &SolverOptions,
) -> Result<LogisticModel> {
    let w = check(x, y, w, n_classes, lambda2)?;
    let (n, p) = x.shape();
    let nf = n as f64;
    let sw: f64 = w.iter().sum();

    let mut class_w = vec![0.0; n_classes];
    for (c, wi) in y.iter().zip(&w) {
        class_w[*c] += wi;
    }
    if class_w.iter().any(|v| *v == 0.0) {
        let freq: Vec<f64> = class_w.iter().map(|v| v / sw).collect();
        return Ok(LogisticModel {
            n_classes,
            coef: vec![vec![0.0; p]; n_classes - 1],
            intercept: vec![0.0; n_classes - 1],
            constant: Some(freq),
            converged: true,
        });
    }

    // z̃ = [1, (x - m)/s]
    let mut mean = vec![0.0; p];
    let mut scale = vec![1.0; p];
    if opts.standardize {
        for j in 0..p {
            let c = x.column(j);
            mean[j] = c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
            let v = c
                .iter()
                .zip(&w)
                .map(|(a, b)| b * (a - mean[j]).powi(2))
                .sum::<f64>()
                / sw;
            if v > 1e-300 {
                scale[j] = v.sqrt();
            }
        }
    }
    let q = p + 1;
    let z = DMatrix::from_fn(n, q, |i, j| {
        if j == 0 {
            1.0
        } else {
            (x[(i, j - 1)] - mean[j - 1]) / scale[j - 1]
        }
    });
    let pen: Vec<f64> = (0..q)
        .map(|j| {
            if j == 0 {
                0.0
            } else {
                lambda2 / (scale[j - 1] * scale[j - 1])
            }
        })
        .collect();
    let kc = n_classes - 1;
    let dim = kc * q;

    let probs = |theta: &DVector<f64>| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut eta = vec![0.0; n_classes];
        for i in 0..n {
            for c in 0..kc {
                let mut s = 0.0;
                for j in 0..q {
                    s += theta[c * q + j] * z[(i, j)];
                }
                eta[c + 1] = s;
            }
            out.push(softmax(&eta));
        }
        out
    };
    let objective = |theta: &DVector<f64>, pr: &[Vec<f64>]| -> f64 {
        let mut nll = 0.0;
        for i in 0..n {
            nll -= w[i] * pr[i][y[i]].max(1e-300).ln();
        }
        let mut r = 0.0;
        for c in 0..kc {
            for j in 0..q {
                r += pen[j] * theta[c * q + j].powi(2);
            }
        }
        nll / nf + 0.5 * r
    };

    let mut theta = DVector::<f64>::zeros(dim);
    // start intercepts at log class odds
    for c in 0..kc {
        theta[c * q] = (class_w[c + 1] / class_w[0]).ln();
    }
    let mut pr = probs(&theta);
    let mut obj = objective(&theta, &pr);
    let mut converged = false;
    let max_newton = opts.max_iters.min(200);
    for _ in 0..max_newton {
        let mut grad = DVector::<f64>::zeros(dim);
        for i in 0..n {
            for c in 0..kc {
                let r = w[i] * (pr[i][c + 1] - f64::from(u8::from(y[i] == c + 1))) / nf;
                for j in 0..q {
                    grad[c * q + j] += r * z[(i, j)];
                }
            }
        }
        for c in 0..kc {
            for j in 0..q {
                grad[c * q + j] += pen[j] * theta[c * q + j];
            }
        }
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        for c in 0..kc {
            for d in c..kc {
                let dw: Vec<f64> = (0..n)
                    .map(|i| {
                        let pc = pr[i][c + 1];
                        let pd = pr[i][d + 1];
                        w[i] * pc * (f64::from(u8::from(c == d)) - pd) / nf
                    })
                    .collect();
                let scaled = DMatrix::from_fn(n, q, |i, j| z[(i, j)] * dw[i]);
                let block = z.transpose() * scaled;
                h.view_mut((c * q, d * q), (q, q)).copy_from(&block);
                if c != d {
                    h.view_mut((d * q, c * q), (q, q))
                        .copy_from(&block.transpose());
                }
            }
            for j in 0..q {
                h[(c * q + j, c * q + j)] += pen[j];
            }
        }
        let step = solve_spd(h, &grad)?;
        let decrement = grad.dot(&step);
        if decrement.abs() < 2.0 * opts.tol.min(1e-12) || step.amax() < opts.tol {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand = &theta - t * &step;
            let cpr = probs(&cand);
            let cobj = objective(&cand, &cpr);
            if cobj <= obj - 1e-4 * t * decrement {
                theta = cand;
                pr = cpr;
                obj = cobj;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no further decrease is representable
            converged = true;
            break;
        }
    }

    let mut coef = vec![vec![0.0; p]; kc];
    let mut intercept = vec![0.0; kc];
    for c in 0..kc {
        let mut b = theta[c * q];
        for j in 0..p {
            let s = theta[c * q + j + 1] / scale[j];
            coef[c][j] = s;
            b -= s * mean[j];
        }
        intercept[c] = b;
    }
    Ok(LogisticModel {
        n_classes,
        coef,
        intercept,
        constant: None,
        converged,
    })
}

fn solve_spd(mut h: DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(ch) = h.clone().cholesky() {
            return Ok(ch.solve(g));
        }
        let add = if jitter == 0.0 {
            scale * 1e-12
        } else {
            jitter * 9.0
        };
        for i in 0..h.nrows() {
            h[(i, i)] += add;
        }
        jitter += add;
    }
    Err(TauqError::Numerical(
        "logistic Hessian is not positive definite".into(),
    ))
}

/// Penalized objective of [`fit_multinomial`] at `model`, in original coordinates.
pub fn logistic_objective(
    model: &LogisticModel,
    x: &DMatrix<f64>,
    y: &[usize],
    w: Option<&[f64]>,
    lambda2: f64,
) -> Result<f64> {
    let w = check(x, y, w, model.n_classes, lambda2)?;
    let n = x.nrows();
    let mut nll = 0.0;
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        nll -= w[i] * model.predict_proba_row(&row)[y[i]].max(1e-300).ln();
    }
    let r: f64 = model.coef.iter().flatten().map(|v| v * v).sum();
    Ok(nll / n as f64 + 0.5 * lambda2 * r)
}

/// Gradient of [`logistic_objective`], laid out per free class as `[intercept, slopes..]`.
pub fn logistic_gradient(
    model: &LogisticModel,
    x: &DMatrix<f64>,
    y: &[usize],
    w: Option<&[f64]>,
    lambda2: f64,
) -> Result<Vec<f64>> {
    let w = check(x, y, w, model.n_classes, lambda2)?;
    let (n, p) = x.shape();
    let q = p + 1;
    let kc = model.n_classes - 1;
    let mut g = vec![0.0; kc * q];
    for i in 0..n {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        let pr = model.predict_proba_row(&row);
        for c in 0..kc {
            let r = w[i] * (pr[c + 1] - f64::from(u8::from(y[i] == c + 1))) / n as f64;
            g[c * q] += r;
            for j in 0..p {
                g[c * q + j + 1] += r * row[j];
            }
        }
    }
    let theta = model.params();
    for c in 0..kc {
        for j in 1..q {
            g[c * q + j] += lambda2 * theta[c * q + j];
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(30, 2, |i, j| {
            ((i * (j + 3)) % 7) as f64 - 3.0 + 0.1 * j as f64
        });
        let y = (0..30)
            .map(|i| usize::from((i * 5) % 3 == 0 || x[(i, 0)] > 1.0))
            .collect();
        (x, y)
    }

    #[test]
    fn stationary_point_and_scale_invariance() {
        let (x, y) = data();
        let lam = 0.05;
        let a = fit_logistic(&x, &y, None, lam, &SolverOptions::default()).unwrap();
        let g = logistic_gradient(&a, &x, &y, None, lam).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-7), "{g:?}");
        let raw = SolverOptions {
            standardize: false,
            ..Default::default()
        };
        let b = fit_logistic(&x, &y, None, lam, &raw).unwrap();
        for j in 0..2 {
            assert!((a.coef[0][j] - b.coef[0][j]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let (x, y) = data();
        let mut m = fit_logistic(&x, &y, None, 0.1, &SolverOptions::default()).unwrap();
        m.coef[0][0] += 0.3;
        m.intercept[0] -= 0.2;
        let g = logistic_gradient(&m, &x, &y, None, 0.1).unwrap();
        let h = 1e-6;
        let mut mp = m.clone();
        mp.coef[0][1] += h;
        let mut mm = m.clone();
        mm.coef[0][1] -= h;
        let fd = (logistic_objective(&mp, &x, &y, None, 0.1).unwrap()
            - logistic_objective(&mm, &x, &y, None, 0.1).unwrap())
            / (2.0 * h);
        assert!((fd - g[2]).abs() < 1e-6);
    }

    #[test]
    fn missing_class_gives_constant_model() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64);
        let m = fit_multinomial(
            &x,
            &[0, 2, 2, 0, 0],
            3,
            None,
            0.1,
            &SolverOptions::default(),
        )
        .unwrap();
        let p = m.predict_proba_row(&[1.0]);
        assert!((p[0] - 0.6).abs() < 1e-12 && p[1] == 0.0 && (p[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn multinomial_probabilities_sum_to_one() {
        let x = DMatrix::from_fn(60, 1, |i, _| (i % 10) as f64);
        let y: Vec<usize> = (0..60).map(|i| ((i % 10) / 4).min(2)).collect();
        let m = fit_multinomial(&x, &y, 3, None, 0.01, &SolverOptions::default()).unwrap();
        let g = logistic_gradient(&m, &x, &y, None, 0.01).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-7));
        for v in [0.0, 4.5, 9.0] {
            let p = m.predict_proba_row(&[v]);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(m.predict_proba_row(&[0.0])[0] > 0.5);
        assert!(m.predict_proba_row(&[9.0])[2] > 0.5);
    }
}
